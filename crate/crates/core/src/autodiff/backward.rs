use crate::adapters::{
    AdapterStack, ForwardTrace, FrozenModel, ParamHandle, ParamRole, SiteAdapter, UpProjections,
};
use crate::error::{Error, Result};
use crate::linalg::{dot, Vector};
use crate::tasks::Sample;

use super::grads::GradientSet;
use super::loss::LossSpec;

/// Per-layer values kept by the forward pass for the backward sweep.
struct LayerCache {
    input: Vector,
    /// Adapter input after the dropout mask; `None` for unadapted layers.
    adapter_input: Option<Vector>,
    site: Option<usize>,
    trace: Option<ForwardTrace>,
    /// Post-activation output (`tanh`), or the raw output on the last layer.
    output: Vector,
}

/// Forward pass of one sample, optionally with per-layer dropout masks on
/// the adapter inputs. Returns the model output and the per-layer cache.
fn forward_cached(
    stack: &AdapterStack,
    model: &FrozenModel,
    x: &[f64],
    masks: Option<&[Vector]>,
) -> Result<(Vector, Vec<LayerCache>)> {
    let mut z = x.to_vec();
    let last = model.depth() - 1;
    let mut caches = Vec::with_capacity(model.depth());
    for (l, layer) in model.layers().iter().enumerate() {
        let site = stack.site_index(l, model.tag());
        let mut y = layer.apply(&z)?;
        let mut adapter_input = None;
        let mut trace = None;
        if let Some(idx) = site {
            let ua = match masks {
                Some(m) => z.iter().zip(&m[l]).map(|(v, k)| v * k).collect(),
                None => z.clone(),
            };
            let (delta, t) = stack.adapter_delta(idx, &ua)?;
            if delta.len() != y.len() {
                return Err(Error::ShapeMismatch {
                    op: "forward",
                    left: (y.len(), 1),
                    right: (delta.len(), 1),
                });
            }
            for (a, d) in y.iter_mut().zip(&delta) {
                *a += d;
            }
            adapter_input = Some(ua);
            trace = t;
        }
        let output = if l == last {
            y
        } else {
            y.into_iter().map(f64::tanh).collect()
        };
        caches.push(LayerCache {
            input: std::mem::replace(&mut z, output.clone()),
            adapter_input,
            site,
            trace,
            output,
        });
    }
    Ok((z, caches))
}

/// Model output of one sample with optional dropout masks (training path).
pub fn forward_with_masks(
    stack: &AdapterStack,
    model: &FrozenModel,
    x: &[f64],
    masks: Option<&[Vector]>,
) -> Result<Vector> {
    Ok(forward_cached(stack, model, x, masks)?.0)
}

/// Mean batch loss without gradients (no dropout).
pub fn batch_loss(
    stack: &AdapterStack,
    model: &FrozenModel,
    batch: &[Sample],
    loss: LossSpec,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    let mut total = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let y = model.forward(stack, &s.input)?;
        let v = loss.value(&y, &s.target)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { sample: i });
        }
        total += v;
    }
    Ok(total / batch.len() as f64)
}

/// Mean batch loss and its exact gradient for every trainable tensor.
pub fn backward(
    stack: &AdapterStack,
    model: &FrozenModel,
    batch: &[Sample],
    loss: LossSpec,
) -> Result<(f64, GradientSet)> {
    backward_with_masks(stack, model, batch, loss, None)
}

/// As [`backward`], with dropout masks `masks[sample][layer]` already
/// scaled by `1/(1-p)`.
pub fn backward_with_masks(
    stack: &AdapterStack,
    model: &FrozenModel,
    batch: &[Sample],
    loss: LossSpec,
    masks: Option<&[Vec<Vector>]>,
) -> Result<(f64, GradientSet)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    let inv_n = 1.0 / batch.len() as f64;
    let mut grads = GradientSet::zeros_like(stack);
    let mut total = 0.0;
    for (i, sample) in batch.iter().enumerate() {
        let m = masks.map(|m| m[i].as_slice());
        let (out, caches) = forward_cached(stack, model, &sample.input, m)?;
        let (value, gy) = loss.value_and_grad(&out, &sample.target)?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { sample: i });
        }
        total += value;
        let mut g: Vector = gy.into_iter().map(|v| v * inv_n).collect();
        let last = caches.len() - 1;
        for (l, cache) in caches.iter().enumerate().rev() {
            if l != last {
                for (gv, z) in g.iter_mut().zip(&cache.output) {
                    *gv *= 1.0 - z * z;
                }
            }
            let w0 = model.layers()[l].w0();
            let mut gu = w0.matvec_t(&g)?;
            if let (Some(idx), Some(ua)) = (cache.site, cache.adapter_input.as_ref()) {
                let gua = site_backward(stack, idx, ua, cache.trace.as_ref(), &g, &mut grads)?;
                match m {
                    Some(mk) => {
                        for ((a, b), k) in gu.iter_mut().zip(&gua).zip(&mk[l]) {
                            *a += k * b;
                        }
                    }
                    None => {
                        for (a, b) in gu.iter_mut().zip(&gua) {
                            *a += b;
                        }
                    }
                }
            }
            debug_assert_eq!(gu.len(), cache.input.len());
            g = gu;
        }
    }
    Ok((total * inv_n, grads))
}

/// Accumulates the gradients of one site given `gy = ∂loss/∂y` at its
/// output; returns `∂loss/∂u` at the adapter input `u`.
fn site_backward(
    stack: &AdapterStack,
    idx: usize,
    u: &[f64],
    trace: Option<&ForwardTrace>,
    gy: &[f64],
    grads: &mut GradientSet,
) -> Result<Vector> {
    let site = &stack.sites()[idx];
    let cfg = stack.config();
    let s = cfg.scale();
    let h = |role| ParamHandle::site(site.layer, site.tag, role);
    match &site.adapter {
        SiteAdapter::Lora(ad) => {
            let p = ad.a.matvec(u)?;
            grads.slot(&h(ParamRole::LoraB)).add_outer(s, gy, &p);
            let gp: Vector = ad.b.matvec_t(gy)?.into_iter().map(|v| s * v).collect();
            grads.slot(&h(ParamRole::LoraA)).add_outer(1.0, &gp, u);
            ad.a.matvec_t(&gp)
        }
        SiteAdapter::MoeLora(ml) => {
            let t = trace.expect("mixture sites produce a trace");
            let n = ml.experts();
            let gg: Vector = t.expert_outputs.iter().map(|y| s * dot(gy, y)).collect();
            let mut gu = vec![0.0; u.len()];
            for i in 0..n {
                let coef = s * t.gates[i];
                grads.slot(&h(ParamRole::B(i))).add_outer(coef, gy, &t.h[i]);
                let gh: Vector = ml.b[i].matvec_t(gy)?.into_iter().map(|v| coef * v).collect();
                grads.slot(&h(ParamRole::A(i))).add_outer(1.0, &gh, u);
                accumulate(&mut gu, &ml.a[i].matvec_t(&gh)?);
            }
            let gz = softmax_backward(&t.gates, &gg);
            grads.slot(&h(ParamRole::Router)).add_outer(1.0, &gz, u);
            accumulate(&mut gu, &ml.router.matvec_t(&gz)?);
            Ok(gu)
        }
        SiteAdapter::TalkLora(tl) => {
            let t = trace.expect("mixture sites produce a trace");
            let n = tl.experts();
            let b = tl.b.resolve(stack.store())?;
            let b_handle = |i| match tl.b {
                UpProjections::Shared(tag) => ParamHandle::shared(tag, i),
                UpProjections::Owned(_) => h(ParamRole::B(i)),
            };
            let gg: Vector = t.expert_outputs.iter().map(|y| s * dot(gy, y)).collect();
            let mut gh: Vec<Vector> = Vec::with_capacity(n);
            for i in 0..n {
                let coef = s * t.gates[i];
                let p = tl.e[i].matvec(&t.h[i])?;
                grads.slot(&b_handle(i)).add_outer(coef, gy, &p);
                let gp: Vector = b[i].matvec_t(gy)?.into_iter().map(|v| coef * v).collect();
                grads.slot(&h(ParamRole::E(i))).add_outer(1.0, &gp, &t.h[i]);
                gh.push(tl.e[i].matvec_t(&gp)?);
            }
            let gz = softmax_backward(&t.gates, &gg);
            let cat: Vector = t.h_tilde.iter().flatten().copied().collect();
            grads.slot(&h(ParamRole::Router)).add_outer(1.0, &gz, &cat);
            let gcat = tl.router.matvec_t(&gz)?;
            let re = t.h[0].len();
            let ght: Vec<&[f64]> = gcat.chunks(re).collect();
            if cfg.talking_enabled {
                let gc = grads.slot(&h(ParamRole::C));
                for i in 0..n {
                    for j in 0..n {
                        let cur = gc.get(i, j);
                        gc.set(i, j, cur + dot(ght[i], &t.h[j]));
                    }
                }
                for (j, ghj) in gh.iter_mut().enumerate() {
                    for (i, gti) in ght.iter().enumerate() {
                        let cij = tl.c.get(i, j);
                        for (a, v) in ghj.iter_mut().zip(gti.iter()) {
                            *a += cij * v;
                        }
                    }
                }
            } else {
                for (ghi, gti) in gh.iter_mut().zip(&ght) {
                    accumulate(ghi, gti);
                }
            }
            let mut gu = vec![0.0; u.len()];
            for (i, ghi) in gh.iter().enumerate() {
                grads.slot(&h(ParamRole::A(i))).add_outer(1.0, ghi, u);
                accumulate(&mut gu, &tl.a[i].matvec_t(ghi)?);
            }
            Ok(gu)
        }
    }
}

/// Pulls `∂loss/∂g` back through softmax: `(diag(g) − ggᵀ)·gg`.
pub fn softmax_backward(g: &[f64], gg: &[f64]) -> Vector {
    let mean = dot(g, gg);
    g.iter().zip(gg).map(|(gi, ggi)| gi * (ggi - mean)).collect()
}

fn accumulate(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_backward_matches_jacobian() {
        let g = [0.2, 0.5, 0.3];
        let gg = [1.0, -2.0, 0.5];
        let out = softmax_backward(&g, &gg);
        for i in 0..3 {
            let mut expect = 0.0;
            for j in 0..3 {
                let jac = if i == j { g[i] - g[i] * g[j] } else { -g[i] * g[j] };
                expect += jac * gg[j];
            }
            assert!((out[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_backward_kills_constant_shift() {
        let out = softmax_backward(&[0.25, 0.75], &[3.0, 3.0]);
        assert!(out.iter().all(|v| v.abs() < 1e-15));
    }
}
