use alloc::vec::Vec;

use rand::Rng;

use super::dual::{Dual, Scalar};
use crate::{rng, Error, Result};

/// Per-coordinate affine map between physical and normalized units:
/// `normalized = (physical − shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Affine {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: alloc::vec![0.0; dim],
            scale: alloc::vec![1.0; dim],
        }
    }

    /// Maps `[lo, hi]` onto `[-1, 1]` per coordinate.
    pub fn from_range(lo: &[f64], hi: &[f64]) -> Self {
        Self {
            shift: lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            scale: lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    fn validate(&self, dim: usize, what: &'static str) -> Result<()> {
        Error::check_len(what, dim, self.shift.len())?;
        Error::check_len(what, dim, self.scale.len())?;
        if self.scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) || self.shift.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig(
                "normalization scales must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Fully connected network: tanh on hidden layers, identity on the output.
///
/// Weights and biases are stored in one flat vector, layer by layer, each
/// layer as a row-major `out × in` weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    input_norm: Affine,
    output_norm: Affine,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases, identity normalization.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        validate_sizes(sizes)?;
        let mut r = rng::seeded(seed);
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            for _ in 0..fan_in * fan_out {
                params.push(limit * (2.0 * r.random::<f64>() - 1.0));
            }
            params.extend(core::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
            input_norm: Affine::identity(sizes[0]),
            output_norm: Affine::identity(sizes[sizes.len() - 1]),
        })
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>, input_norm: Affine, output_norm: Affine) -> Result<Self> {
        validate_sizes(&sizes)?;
        Error::check_len("network parameters", param_count(&sizes), params.len())?;
        input_norm.validate(sizes[0], "input normalization")?;
        output_norm.validate(sizes[sizes.len() - 1], "output normalization")?;
        Ok(Self {
            sizes,
            params,
            input_norm,
            output_norm,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_norm(&self) -> &Affine {
        &self.input_norm
    }

    pub fn output_norm(&self) -> &Affine {
        &self.output_norm
    }

    pub fn set_input_norm(&mut self, norm: Affine) -> Result<()> {
        norm.validate(self.input_dim(), "input normalization")?;
        self.input_norm = norm;
        Ok(())
    }

    pub fn set_output_norm(&mut self, norm: Affine) -> Result<()> {
        norm.validate(self.output_dim(), "output normalization")?;
        self.output_norm = norm;
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Error::check_len("network input", self.input_dim(), input.len())?;
        let mut out = alloc::vec![0.0; self.output_dim()];
        self.forward_generic(input, &mut out);
        Ok(out)
    }

    /// Forward pass for any [`Scalar`]; lengths are assumed checked.
    pub fn forward_generic<S: Scalar>(&self, input: &[S], out: &mut [S]) {
        let widest = self.sizes.iter().copied().max().unwrap_or(0);
        let mut cur: Vec<S> = Vec::with_capacity(widest);
        let mut next: Vec<S> = Vec::with_capacity(widest);
        for (i, v) in input.iter().enumerate() {
            cur.push((*v - S::from_f64(self.input_norm.shift[i])).scale(1.0 / self.input_norm.scale[i]));
        }
        let layers = self.sizes.len() - 1;
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            next.clear();
            for j in 0..n_out {
                let row = &w[j * n_in..(j + 1) * n_in];
                let mut acc = S::from_f64(b[j]);
                for (wk, hk) in row.iter().zip(&cur) {
                    acc = acc + hk.scale(*wk);
                }
                next.push(if l + 1 < layers { acc.tanh() } else { acc });
            }
            core::mem::swap(&mut cur, &mut next);
        }
        for (k, o) in out.iter_mut().enumerate() {
            *o = cur[k].scale(self.output_norm.scale[k]) + S::from_f64(self.output_norm.shift[k]);
        }
    }

    /// Jacobian of the output with respect to the input, row-major
    /// `outputs × inputs`, by one dual-number pass per input coordinate.
    pub fn grad_input(&self, input: &[f64]) -> Result<Vec<f64>> {
        Error::check_len("network input", self.input_dim(), input.len())?;
        let (ni, no) = (self.input_dim(), self.output_dim());
        let mut jac = alloc::vec![0.0; no * ni];
        let mut xs: Vec<Dual> = input.iter().map(|&v| Dual::constant(v)).collect();
        let mut out = alloc::vec![Dual::default(); no];
        for j in 0..ni {
            xs[j].eps = 1.0;
            self.forward_generic(&xs, &mut out);
            xs[j].eps = 0.0;
            for k in 0..no {
                jac[k * ni + j] = out[k].eps;
            }
        }
        Ok(jac)
    }

    /// Output and its derivative along input coordinate `direction`.
    pub fn forward_with_tangent(&self, input: &[f64], direction: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        Error::check_len("network input", self.input_dim(), input.len())?;
        let xs: Vec<Dual> = input
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual::new(v, if i == direction { 1.0 } else { 0.0 }))
            .collect();
        let mut out = alloc::vec![Dual::default(); self.output_dim()];
        self.forward_generic(&xs, &mut out);
        Ok((out.iter().map(|d| d.re).collect(), out.iter().map(|d| d.eps).collect()))
    }

    /// Reverse-mode gradient of `Σ_i loss_i(output_i)` with respect to every
    /// weight. `loss(i, y, dy)` returns the sample loss and writes `∂loss/∂y`.
    /// `inputs` is row-major `batch × input_dim`.
    pub fn grad_weights<F>(&self, inputs: &[f64], mut loss: F) -> Result<(f64, Vec<f64>)>
    where
        F: FnMut(usize, &[f64], &mut [f64]) -> f64,
    {
        self.backprop(inputs, None, |i, y, _, gy, _| loss(i, y, gy))
    }

    /// Like [`Mlp::grad_weights`] for losses that also depend on the
    /// derivative of the output along input coordinate `direction` (in
    /// physical units). `loss(i, y, ẏ, ∂/∂y, ∂/∂ẏ)`.
    pub fn grad_weights_with_tangent<F>(&self, inputs: &[f64], direction: usize, loss: F) -> Result<(f64, Vec<f64>)>
    where
        F: FnMut(usize, &[f64], &[f64], &mut [f64], &mut [f64]) -> f64,
    {
        if direction >= self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "tangent direction",
                expected: self.input_dim(),
                found: direction,
            });
        }
        self.backprop(inputs, Some(direction), loss)
    }

    fn backprop<F>(&self, inputs: &[f64], direction: Option<usize>, mut loss: F) -> Result<(f64, Vec<f64>)>
    where
        F: FnMut(usize, &[f64], &[f64], &mut [f64], &mut [f64]) -> f64,
    {
        let ni = self.input_dim();
        let no = self.output_dim();
        if !inputs.len().is_multiple_of(ni) {
            return Err(Error::DimensionMismatch {
                what: "input batch",
                expected: ni,
                found: inputs.len() % ni,
            });
        }
        let batch = inputs.len() / ni;
        let layers = self.sizes.len() - 1;
        let with_tan = direction.is_some();
        let offsets = layer_offsets(&self.sizes);
        let mut grads = alloc::vec![0.0; self.params.len()];

        // activations and tangents per layer, row-major batch × width
        let mut acts: Vec<Vec<f64>> = self.sizes.iter().map(|&s| alloc::vec![0.0; batch * s]).collect();
        let mut tans: Vec<Vec<f64>> = if with_tan {
            self.sizes.iter().map(|&s| alloc::vec![0.0; batch * s]).collect()
        } else {
            Vec::new()
        };
        for (r, x) in inputs.chunks_exact(ni).enumerate() {
            for i in 0..ni {
                acts[0][r * ni + i] = (x[i] - self.input_norm.shift[i]) / self.input_norm.scale[i];
            }
            if let Some(d) = direction {
                tans[0][r * ni + d] = 1.0 / self.input_norm.scale[d];
            }
        }
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offsets[l]..offsets[l] + n_in * n_out];
            let b = &self.params[offsets[l] + n_in * n_out..offsets[l] + n_in * n_out + n_out];
            let hidden = l + 1 < layers;
            let (head, tail) = acts.split_at_mut(l + 1);
            let out = &mut tail[0];
            for row in out.chunks_exact_mut(n_out) {
                row.copy_from_slice(b);
            }
            gemm(batch, n_in, n_out, &head[l], n_in, 1, w, 1, n_in, 1.0, out);
            if with_tan {
                let (thead, ttail) = tans.split_at_mut(l + 1);
                let tout = &mut ttail[0];
                gemm(batch, n_in, n_out, &thead[l], n_in, 1, w, 1, n_in, 0.0, tout);
                if hidden {
                    for (a, t) in out.iter_mut().zip(tout.iter_mut()) {
                        let s = libm::tanh(*a);
                        *a = s;
                        *t *= 1.0 - s * s;
                    }
                }
            } else if hidden {
                for a in out.iter_mut() {
                    *a = libm::tanh(*a);
                }
            }
        }

        let mut g = alloc::vec![0.0; batch * no];
        let mut gt = alloc::vec![0.0; if with_tan { batch * no } else { 0 }];
        let (mut y, mut yt) = (alloc::vec![0.0; no], alloc::vec![0.0; no]);
        let (mut gy, mut gyt) = (alloc::vec![0.0; no], alloc::vec![0.0; no]);
        let mut total = 0.0;
        for r in 0..batch {
            for k in 0..no {
                let sc = self.output_norm.scale[k];
                y[k] = self.output_norm.shift[k] + sc * acts[layers][r * no + k];
                yt[k] = if with_tan { sc * tans[layers][r * no + k] } else { 0.0 };
            }
            gy.fill(0.0);
            gyt.fill(0.0);
            let li = loss(r, &y, &yt, &mut gy, &mut gyt);
            if !li.is_finite() {
                return Err(Error::NonFinite { what: "loss", index: r });
            }
            total += li;
            for k in 0..no {
                let sc = self.output_norm.scale[k];
                g[r * no + k] = gy[k] * sc;
                if with_tan {
                    gt[r * no + k] = gyt[k] * sc;
                }
            }
        }

        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w_off = offsets[l];
            let b_off = w_off + n_in * n_out;
            if l + 1 < layers {
                let s = &acts[l + 1];
                if with_tan {
                    let st = &tans[l + 1];
                    for i in 0..g.len() {
                        let d = 1.0 - s[i] * s[i];
                        g[i] = g[i] * d - 2.0 * s[i] * st[i] * gt[i];
                        gt[i] *= d;
                    }
                } else {
                    for (gi, si) in g.iter_mut().zip(s) {
                        *gi *= 1.0 - si * si;
                    }
                }
            }
            for row in g.chunks_exact(n_out) {
                for (acc, v) in grads[b_off..b_off + n_out].iter_mut().zip(row) {
                    *acc += v;
                }
            }
            // dW (n_out × n_in) += gᵀ · a (+ ġᵀ · ȧ)
            let dw = &mut grads[w_off..b_off];
            gemm(n_out, batch, n_in, &g, 1, n_out, &acts[l], n_in, 1, 1.0, dw);
            if with_tan {
                gemm(n_out, batch, n_in, &gt, 1, n_out, &tans[l], n_in, 1, 1.0, dw);
            }
            if l > 0 {
                let w = &self.params[w_off..b_off];
                let mut gp = alloc::vec![0.0; batch * n_in];
                gemm(batch, n_out, n_in, &g, n_out, 1, w, n_in, 1, 0.0, &mut gp);
                g = gp;
                if with_tan {
                    let mut gtp = alloc::vec![0.0; batch * n_in];
                    gemm(batch, n_out, n_in, &gt, n_out, 1, w, n_in, 1, 0.0, &mut gtp);
                    gt = gtp;
                }
            }
        }
        Ok((total, grads))
    }
}

/// `c (m×n, row-major) = a (m×k) · b (k×n) + beta · c`, with `a` and `b`
/// given by row and column strides.
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= (m - 1) * rsa + k.saturating_sub(1) * csa + usize::from(k > 0));
    assert!(b.len() >= k.saturating_sub(1) * rsb + (n - 1) * csb + usize::from(k > 0));
    assert!(c.len() >= m * n);
    // SAFETY: the assertions above bound every index the kernel touches
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::InvalidConfig(
            "network needs at least an input and an output layer, all of positive size".into(),
        ));
    }
    Ok(())
}

pub(crate) fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn layer_offsets(sizes: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(sizes.len());
    let mut acc = 0;
    for w in sizes.windows(2) {
        offsets.push(acc);
        acc += w[0] * w[1] + w[1];
    }
    offsets
}
