use pyo3::ffi::c_str;
use pyo3::prelude::*;

use noisy_ssl_py::noisy_ssl_py;

#[test]
fn module_works_inside_an_embedded_interpreter() {
    pyo3::append_to_inittab!(noisy_ssl_py);
    Python::initialize();
    Python::attach(|py| {
        let code = c_str!(
            r#"
import noisy_ssl_py as ns
assert abs(ns.forget_rate(5, 0.5) - 0.75) < 1e-12
train = ns.Dataset.synthetic(2, 6, 8, 8, seed=1).with_noise(0.5, seed=2)
test = ns.Dataset.synthetic(2, 3, 8, 8, seed=3, name="test")
model = ns.Model.tiny(8, 8, 2, seed=4)
metrics = ns.train_ce(model, train, test, epochs=2, seed=0, batch_size=4)
assert len(metrics) == 2 and "test_acc" in metrics[0]
try:
    ns.sharpen([0.0, 0.0], 0.5)
    raise SystemExit("expected an error")
except ValueError as e:
    assert "[usage]" in str(e)
"#
        );
        py.run(code, None, None).unwrap();
    });
}
