use pyo3::prelude::*;

#[pymodule]
fn obsdn(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
