use pyo3::prelude::*;
#[pymodule]
fn protdiff_py(_m: &Bound<PyModule>) -> PyResult<()> { Ok(()) }
