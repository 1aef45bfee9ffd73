use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use snvrg::driver::{self, DriverConfig, DriverOutcome, Overrides, StepRule};
use snvrg::harness::{self, BuiltProblem, ExperimentConfig, Suite};
use snvrg::ncfinder::{find_negative_curvature, NcQuery, NcSettings};
use snvrg::problems::{make_regularized_problem, GradCounter, SaddleBuilder};
use snvrg::schedule::{self as sched, NestedSchedule};
use snvrg::{epoch, rng};

fn py_err(e: snvrg::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Schedule", frozen, module = "snvrg_py")]
struct PySchedule {
    inner: NestedSchedule,
}

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (b0, m = 1.0))]
    fn new(b0: u64, m: f64) -> PyResult<Self> {
        Ok(Self { inner: sched::derive_schedule(b0, m).map_err(py_err)? })
    }

    #[getter]
    fn b0(&self) -> u64 {
        self.inner.b0
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn m(&self) -> f64 {
        self.inner.m
    }

    #[getter]
    fn loops(&self) -> Vec<u64> {
        self.inner.loops.clone()
    }

    #[getter]
    fn batches(&self) -> Vec<u64> {
        self.inner.batches.clone()
    }

    #[getter]
    fn p(&self) -> f64 {
        self.inner.geometric_p()
    }

    #[getter]
    fn clamped(&self) -> bool {
        self.inner.clamped
    }

    fn expected_epoch_cost(&self) -> u64 {
        self.inner.expected_epoch_cost()
    }

    fn mean_epoch_cost(&self) -> f64 {
        self.inner.mean_epoch_cost()
    }

    /// Cap every batch at `n`.
    fn clamp(&self, n: u64) -> Self {
        Self { inner: self.inner.clamp(Some(n)) }
    }

    fn __repr__(&self) -> String {
        format!(
            "Schedule(b0={}, K={}, T={:?}, B={:?}, M={})",
            self.inner.b0, self.inner.k, self.inner.loops, self.inner.batches, self.inner.m
        )
    }
}

#[pyclass(name = "Problem", frozen, module = "snvrg_py")]
struct PyProblem {
    inner: BuiltProblem,
}

impl PyProblem {
    fn check_dim(&self, x: &[f64]) -> PyResult<()> {
        let d = self.inner.as_dyn().dim();
        if x.len() != d {
            return Err(PyValueError::new_err(format!("expected {d} coordinates, got {}", x.len())));
        }
        Ok(())
    }
}

#[pymethods]
impl PyProblem {
    /// Quartic strict saddle; omit `n` for a streaming problem.
    #[staticmethod]
    #[pyo3(signature = (dim, n = None, negative_eigenvalue = -1.0, seed = 0, rotated = false))]
    fn saddle(dim: usize, n: Option<usize>, negative_eigenvalue: f64, seed: u64, rotated: bool) -> PyResult<Self> {
        let mut b = SaddleBuilder::new(dim, negative_eigenvalue).map_err(py_err)?.seed(seed);
        if rotated {
            b = b.rotated();
        }
        let inner = match n {
            Some(n) => BuiltProblem::Finite(b.components(n).finite().map_err(py_err)?),
            None => BuiltProblem::Streaming(b.streaming().map_err(py_err)?),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (dim, n, seed = 0))]
    fn regularized(dim: usize, n: usize, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: BuiltProblem::Finite(make_regularized_problem(dim, n, seed).map_err(py_err)?) })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.as_dyn().dim()
    }

    /// Component count, or None for a streaming problem.
    #[getter]
    fn n(&self) -> Option<u64> {
        self.inner.as_dyn().population().size()
    }

    #[getter]
    fn start(&self) -> Vec<f64> {
        self.inner.as_dyn().start().to_vec()
    }

    fn smoothness<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.as_dyn().smoothness();
        let d = PyDict::new(py);
        d.set_item("l1", s.l1)?;
        d.set_item("l2", s.l2)?;
        d.set_item("l3", s.l3)?;
        d.set_item("sigma2", s.sigma2)?;
        d.set_item("delta_f", s.delta_f)?;
        Ok(d)
    }

    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        self.check_dim(&x)?;
        Ok(self.inner.as_dyn().value(&x))
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_dim(&x)?;
        Ok(self.inner.as_dyn().gradient(&x))
    }

    /// Dense Hessian as a list of rows.
    fn hessian(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        self.check_dim(&x)?;
        let h = self.inner.as_dyn().hessian(&x);
        Ok((0..h.nrows()).map(|i| h.row(i).iter().copied().collect()).collect())
    }

    /// `(gradient_norm, lambda_min, is_sosp)` from the exact oracles.
    fn classify(&self, x: Vec<f64>, eps: f64, eps_h: f64) -> PyResult<(f64, f64, bool)> {
        self.check_dim(&x)?;
        let c = driver::classify_point(self.inner.as_dyn(), &x, eps, eps_h);
        Ok((c.gradient_norm, c.lambda_min, c.is_sosp))
    }

    /// One epoch from `x0` (default: the start point).
    #[pyo3(signature = (schedule, x0 = None, seed = 0))]
    fn run_epoch<'py>(
        &self,
        py: Python<'py>,
        schedule: &PySchedule,
        x0: Option<Vec<f64>>,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let x0 = x0.unwrap_or_else(|| self.start());
        self.check_dim(&x0)?;
        let mut counter = GradCounter::new();
        let r = epoch::run_epoch(&x0, self.inner.as_dyn(), &schedule.inner, &mut rng::stream(seed, 0), &mut counter)
            .map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("x_out", r.x_out)?;
        d.set_item("length", r.length)?;
        d.set_item("grads_used", r.grads_used)?;
        d.set_item("left_domain", r.left_domain)?;
        Ok(d)
    }

    /// Unit direction with Rayleigh quotient below `-eps_h/2`, or None.
    #[pyo3(signature = (z, eps_h, delta = 0.1, seed = 0))]
    fn negative_curvature(&self, z: Vec<f64>, eps_h: f64, delta: f64, seed: u64) -> PyResult<(Option<Vec<f64>>, f64, u64)> {
        self.check_dim(&z)?;
        let s = self.inner.as_dyn().smoothness();
        let q = NcQuery { z, eps_h, delta, l1: s.l1, l2: s.l2 };
        let mut counter = GradCounter::new();
        let probe = find_negative_curvature(self.inner.as_ref(), &q, &NcSettings::default(), &mut rng::stream(seed, 0), &mut counter)
            .map_err(py_err)?;
        Ok((probe.result.direction().map(<[f64]>::to_vec), probe.rayleigh_estimate, counter.count()))
    }

    fn __repr__(&self) -> String {
        match self.n() {
            Some(n) => format!("Problem(dim={}, n={n})", self.dim()),
            None => format!("Problem(dim={}, streaming)", self.dim()),
        }
    }
}

#[pyclass(name = "Config", frozen, module = "snvrg_py")]
struct PyConfig {
    inner: DriverConfig,
}

#[pymethods]
impl PyConfig {
    /// Theory parameters for `problem`, with optional desk-scale overrides.
    #[new]
    #[pyo3(signature = (problem, eps, eps_h, order = 2, *, b0 = None, u = None, m = None, eta = None, b0_check = None, step_rule = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        problem: &PyProblem,
        eps: f64,
        eps_h: f64,
        order: u8,
        b0: Option<u64>,
        u: Option<u64>,
        m: Option<f64>,
        eta: Option<f64>,
        b0_check: Option<u64>,
        step_rule: Option<&str>,
    ) -> PyResult<Self> {
        let step_rule = match step_rule {
            None => None,
            Some("theorem") => Some(StepRule::Theorem),
            Some("lemma") => Some(StepRule::Lemma),
            Some(other) => return Err(PyValueError::new_err(format!("unknown step rule {other:?}"))),
        };
        let o = Overrides { b0, u, m, eta, b0_check, step_rule };
        let inner = driver::configure(problem.inner.as_ref(), order, eps, eps_h, &o).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn eps(&self) -> f64 {
        self.inner.eps
    }

    #[getter]
    fn eps_h(&self) -> f64 {
        self.inner.eps_h
    }

    #[getter]
    fn u(&self) -> u64 {
        self.inner.u
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.inner.eta
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    #[getter]
    fn b0(&self) -> u64 {
        self.inner.b0
    }

    #[getter]
    fn b0_check(&self) -> u64 {
        self.inner.b0_check
    }

    #[getter]
    fn schedule(&self) -> PySchedule {
        PySchedule { inner: self.inner.schedule.clone() }
    }

    /// Formula values before overrides.
    fn theory<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let t = &self.inner.theory;
        let d = PyDict::new(py);
        d.set_item("b0", t.b0)?;
        d.set_item("rho", t.rho)?;
        d.set_item("m", t.m)?;
        d.set_item("u", t.u)?;
        d.set_item("delta", t.delta)?;
        d.set_item("eta", t.eta)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(eps={}, eps_h={}, U={}, eta={}, delta={}, B0={})",
            self.inner.eps, self.inner.eps_h, self.inner.u, self.inner.eta, self.inner.delta, self.inner.b0
        )
    }
}

/// `(event, u, grads_cum, f_value, grad_norm, rayleigh)`
type EventRow = (&'static str, u64, u64, f64, Option<f64>, Option<f64>);

#[pyclass(name = "Outcome", frozen, module = "snvrg_py")]
struct PyOutcome {
    inner: DriverOutcome,
}

#[pymethods]
impl PyOutcome {
    #[getter]
    fn z_final(&self) -> Vec<f64> {
        self.inner.z_final.clone()
    }

    #[getter]
    fn status(&self) -> &'static str {
        self.inner.status.as_str()
    }

    #[getter]
    fn grads_total(&self) -> u64 {
        self.inner.grads_total
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    #[getter]
    fn probes(&self) -> usize {
        self.inner.probes
    }

    /// Trace rows as `(event, u, grads_cum, f_value, grad_norm, rayleigh)`.
    fn events(&self) -> Vec<EventRow> {
        self.inner
            .trace
            .events
            .iter()
            .map(|e| (e.kind.as_str(), e.u, e.grads_cum, e.f_value, e.grad_norm, e.rayleigh))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Outcome(status={:?}, grads_total={})", self.status(), self.inner.grads_total)
    }
}

/// Runs the driver once on RNG stream 0 of `seed`.
#[pyfunction]
#[pyo3(signature = (problem, config, seed = 0))]
fn run(py: Python<'_>, problem: &PyProblem, config: &PyConfig, seed: u64) -> PyResult<PyOutcome> {
    let inner = py
        .detach(|| driver::run(problem.inner.as_ref(), &config.inner, &mut rng::stream(seed, 0)))
        .map_err(py_err)?;
    Ok(PyOutcome { inner })
}

/// Runs the trials described by a JSON config; returns one outcome per trial.
#[pyfunction]
#[pyo3(signature = (config_json, seed = None, jobs = 1))]
fn run_experiment(py: Python<'_>, config_json: &str, seed: Option<u64>, jobs: usize) -> PyResult<Vec<PyOutcome>> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(py_err)?;
    let results = py
        .detach(|| {
            let problem = cfg.build_problem()?;
            let d = cfg.driver_config(&problem)?;
            harness::run_trials(&problem, &d, cfg.trials, seed.unwrap_or(cfg.seed), jobs)
        })
        .map_err(py_err)?;
    Ok(results.into_iter().map(|r| PyOutcome { inner: r.outcome }).collect())
}

/// Runs verification suites; returns `(name, passed, detail)` rows.
#[pyfunction]
#[pyo3(signature = (suite = "all", seed = 0))]
fn verify(py: Python<'_>, suite: &str, seed: u64) -> PyResult<Vec<(&'static str, bool, String)>> {
    let suite: Suite = suite.parse().map_err(py_err)?;
    let reports = py.detach(|| harness::verify(&suite, seed)).map_err(py_err)?;
    Ok(reports.into_iter().map(|r| (r.name, r.passed, r.detail)).collect())
}

#[pyfunction]
fn subsample_size(sigma2: f64, r: f64, delta: f64) -> u64 {
    driver::subsample_size(sigma2, r, delta)
}

#[pymodule]
fn snvrg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySchedule>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyOutcome>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(subsample_size, m)?)?;
    Ok(())
}
