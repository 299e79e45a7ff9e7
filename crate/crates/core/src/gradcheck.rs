//! Finite-difference verification of analytic gradients.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Scalar, Tensor};

/// A learnable map with an explicit reverse pass.
///
/// `backward` consumes dL/dy for the most recent `forward`, returns dL/dx and
/// adds parameter gradients into [`DifferentiableBlock::params`].
pub trait DifferentiableBlock<T: Scalar> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>>;
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
}

type BuildFn<T> = dyn Fn(&mut Graph<T>, &ParamStore<T>, Var) -> Result<Var>;

/// Adapts a graph-building closure to [`DifferentiableBlock`].
pub struct GraphBlock<T: Scalar> {
    build: Box<BuildFn<T>>,
    params: ParamStore<T>,
    tape: Option<(Graph<T>, Var, Var)>,
}

impl<T: Scalar> GraphBlock<T> {
    pub fn new(params: ParamStore<T>, build: impl Fn(&mut Graph<T>, &ParamStore<T>, Var) -> Result<Var> + 'static) -> Self {
        Self {
            build: Box::new(build),
            params,
            tape: None,
        }
    }
}

impl<T: Scalar> DifferentiableBlock<T> for GraphBlock<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let y = (self.build)(&mut g, &self.params, xv)?;
        let out = g.take_value(y);
        self.tape = Some((g, xv, y));
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (g, xv, y) = self
            .tape
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("backward called before forward".into()))?;
        let grads = g.backward(*y, grad_out.clone())?;
        g.accumulate_param_grads(&grads, &mut self.params)?;
        Ok(grads.get(*xv).cloned().unwrap_or_else(|| Tensor::zeros(g.dims(*xv))))
    }

    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `input[i]` or `<param name>[i]` of the worst element.
    pub worst: String,
    /// Analytic and numeric derivative at `worst`.
    pub worst_pair: (f64, f64),
    pub checked: usize,
}

#[inline]
fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Central-difference check of a block under the scalar loss `sum(y)`.
/// Returns the largest element-wise relative error over the input and all
/// parameters.
pub fn grad_check<T: Scalar, B: DifferentiableBlock<T> + ?Sized>(block: &mut B, input: &Tensor<T>, eps: f64) -> Result<f64> {
    Ok(grad_check_report(block, input, eps)?.max_relative_error)
}

pub fn grad_check_report<T: Scalar, B: DifferentiableBlock<T> + ?Sized>(
    block: &mut B,
    input: &Tensor<T>,
    eps: f64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let y = block.forward(input)?;
    block.params_mut().zero_grads();
    let gx = block.backward(&Tensor::full(y.dims(), T::one()))?;
    for (name, p) in block.params().iter() {
        if !p.grad.all_finite() {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }
    if !gx.all_finite() {
        return Err(Error::NonFiniteGradient("input".into()));
    }

    let e = T::of(eps);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: String::new(),
        worst_pair: (0.0, 0.0),
        checked: 0,
    };
    let note = |r: &mut GradCheckReport, a: f64, n: f64, what: String| {
        let err = relative_error(a, n);
        r.checked += 1;
        if err > r.max_relative_error || r.worst.is_empty() {
            r.max_relative_error = r.max_relative_error.max(err);
            r.worst = what;
            r.worst_pair = (a, n);
        }
    };

    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        let (hi, lo) = (orig + e, orig - e);
        x.data_mut()[i] = hi;
        let fp = block.forward(&x)?.sum_f64();
        x.data_mut()[i] = lo;
        let fm = block.forward(&x)?.sum_f64();
        x.data_mut()[i] = orig;
        let numeric = (fp - fm) / (hi.f64() - lo.f64());
        note(&mut report, gx.data()[i].f64(), numeric, format!("input[{i}]"));
    }

    let names: Vec<String> = block.params().names().map(str::to_string).collect();
    for name in names {
        let analytic = block.params().grad(&name)?.clone();
        for i in 0..analytic.len() {
            let orig = block.params().get(&name)?.data()[i];
            let (hi, lo) = (orig + e, orig - e);
            block.params_mut().get_mut(&name)?.data_mut()[i] = hi;
            let fp = block.forward(input)?.sum_f64();
            block.params_mut().get_mut(&name)?.data_mut()[i] = lo;
            let fm = block.forward(input)?.sum_f64();
            block.params_mut().get_mut(&name)?.data_mut()[i] = orig;
            let numeric = (fp - fm) / (hi.f64() - lo.f64());
            note(&mut report, analytic.data()[i].f64(), numeric, format!("{name}[{i}]"));
        }
    }
    Ok(report)
}

/// Checks the whole gradient at once along a random direction `v` over the
/// input and every parameter: compares `<grad, v>` with the central
/// difference of `sum(y)` along `v`. Insensitive to individual elements
/// whose derivative sits below rounding noise.
pub fn directional_check<T: Scalar, B: DifferentiableBlock<T> + ?Sized>(
    block: &mut B,
    input: &Tensor<T>,
    eps: f64,
    seed: u64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let y = block.forward(input)?;
    block.params_mut().zero_grads();
    let gx = block.backward(&Tensor::full(y.dims(), T::one()))?;

    let root = crate::rng::Stream::new(seed);
    let mut s = root.named("input");
    let vx = Tensor::<T>::from_fn(input.dims(), |_, _, _, _| T::of(s.uniform(-1.0, 1.0)));
    let mut analytic: f64 = gx.data().iter().zip(vx.data()).map(|(g, v)| g.f64() * v.f64()).sum();
    let base = block.params().clone();
    let mut dirs = Vec::new();
    for (name, p) in base.iter() {
        let mut s = root.named(name);
        let v = Tensor::<T>::from_fn(p.value.dims(), |_, _, _, _| T::of(s.uniform(-1.0, 1.0)));
        analytic += p
            .grad
            .data()
            .iter()
            .zip(v.data())
            .map(|(g, v)| g.f64() * v.f64())
            .sum::<f64>();
        dirs.push((name.to_string(), v));
    }

    let mut eval = |sign: f64| -> Result<f64> {
        for (name, v) in &dirs {
            let orig = base.get(name)?;
            let t = orig.zip_map(v, |a, d| T::of(a.f64() + sign * eps * d.f64()))?;
            *block.params_mut().get_mut(name)? = t;
        }
        let x = input.zip_map(&vx, |a, d| T::of(a.f64() + sign * eps * d.f64()))?;
        Ok(block.forward(&x)?.sum_f64())
    };
    let numeric = (eval(1.0)? - eval(-1.0)?) / (2.0 * eps);
    for (name, _) in &dirs {
        *block.params_mut().get_mut(name)? = base.get(name)?.clone();
    }
    Ok(relative_error(analytic, numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn random(dims: [usize; 4], lo: f64, hi: f64, seed: u64) -> Tensor<f32> {
        let mut s = Stream::new(seed);
        Tensor::from_fn(dims, |_, _, _, _| s.uniform(lo, hi) as f32)
    }

    #[test]
    fn linear_scale_is_exact() {
        let mut b = GraphBlock::<f64>::new(ParamStore::new(), |g, _, x| Ok(g.affine(x, 3.0, 0.0)));
        let err = grad_check(&mut b, &random([1, 2, 3, 3], -1.0, 1.0, 1).cast(), 1e-3).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn sigmoid_within_tolerance() {
        let mut b = GraphBlock::new(ParamStore::new(), |g, _, x| Ok(g.sigmoid(x)));
        let err = grad_check(&mut b, &random([1, 3, 4, 4], -2.0, 2.0, 2), 1e-3).unwrap();
        assert!(err <= 1e-3, "{err}");
    }

    #[test]
    fn parameter_gradients_are_checked() {
        let mut ps = ParamStore::new();
        ps.insert("w", random([2, 2, 3, 3], -0.5, 0.5, 3));
        let mut b = GraphBlock::new(ps, |g, ps, x| {
            let w = g.param(ps, "w")?;
            g.conv2d(x, w, 1, 1, crate::tensor::PadMode::Reflect, 1)
        });
        let r = grad_check_report(&mut b, &random([1, 2, 5, 5], -1.0, 1.0, 4), 1e-2).unwrap();
        assert_eq!(r.checked, 50 + 36);
        assert!(r.max_relative_error <= 1e-3, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        struct Lying(ParamStore<f32>);
        impl DifferentiableBlock<f32> for Lying {
            fn forward(&mut self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
                Ok(x.map(|v| v * v))
            }
            fn backward(&mut self, g: &Tensor<f32>) -> Result<Tensor<f32>> {
                Ok(g.clone())
            }
            fn params(&self) -> &ParamStore<f32> {
                &self.0
            }
            fn params_mut(&mut self) -> &mut ParamStore<f32> {
                &mut self.0
            }
        }
        let err = grad_check(&mut Lying(ParamStore::new()), &random([1, 1, 2, 2], 1.0, 2.0, 5), 1e-3).unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut ps = ParamStore::new();
        ps.insert("bad.scale", Tensor::full([1, 1, 1, 1], f32::INFINITY));
        let mut b = GraphBlock::new(ps, |g, ps, x| {
            let s = g.param(ps, "bad.scale")?;
            let y = g.mul(x, s)?;
            g.mul(y, s)
        });
        let err = grad_check(&mut b, &random([1, 1, 2, 2], 1.0, 2.0, 6), 1e-3).unwrap_err();
        assert!(err.to_string().contains("bad.scale"), "{err}");
    }
}
