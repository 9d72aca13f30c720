use pyo3::prelude::*;
use relaxrl_py::relaxrl_py;
use pyo3::types::PyDict;

#[test]
fn module_runs_under_an_embedded_interpreter() {
    pyo3::append_to_inittab!(relaxrl_py);
    Python::initialize();
    Python::attach(|py| {
        let locals = PyDict::new(py);
        py.run(
            c"
import relaxrl_py as rr
inst = rr.Instance.generate('sp1', 3, 2, seed=1)
best = rr.solve(inst, algo='oracle')
found = rr.solve(inst, algo='hybrid', time_limit=5.0)
gap = abs(best.objective - found.objective)
",
            None,
            Some(&locals),
        )
        .unwrap();
        let gap: f64 = locals.get_item("gap").unwrap().unwrap().extract().unwrap();
        assert!(gap < 1e-6);
    });
}
