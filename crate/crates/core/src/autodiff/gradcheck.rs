//! Central finite-difference check of tape gradients.

use alloc::string::String;

use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::param::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Floor on the relative-error denominator. A central difference with
/// `h = 1e-5` in f64 carries roughly `1e-11 · |loss|` of roundoff, so
/// gradients much below this floor cannot be resolved to 1e-4 relative.
pub const REL_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name, flat index, finite difference and tape gradient
    /// where `max_rel_err` was attained.
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

/// `|fd - ad| / max(|fd|, |ad|, REL_EPS)`.
pub fn rel_err(fd: f64, ad: f64) -> f64 {
    (fd - ad).abs() / fd.abs().max(ad.abs()).max(REL_EPS)
}

fn eval<S: Scalar, F>(store: &ParamStore<S>, loss: &mut F) -> Result<f64>
where
    F: FnMut(&mut Graph<S>, &ParamStore<S>) -> Result<Var>,
{
    let mut g = Graph::new();
    let l = loss(&mut g, store)?;
    Ok(g.value(l).data()[0].as_f64())
}

/// Compares the tape gradient of `loss` against `(f(p+h) - f(p-h)) / 2h`
/// for every trainable scalar in `store`. Meant for `f64` stores; the
/// gradients in `store` are overwritten.
pub fn grad_check<S: Scalar, F>(
    store: &mut ParamStore<S>,
    h: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<S>, &ParamStore<S>) -> Result<Var>,
{
    let first = eval(store, &mut loss)?;
    let second = eval(store, &mut loss)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    store.zero_grad();
    let mut g = Graph::new();
    let l = loss(&mut g, store)?;
    g.backward(l, store)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: alloc::vec::Vec<_> = store.ids().collect();
    for id in ids {
        if !store.get(id).trainable {
            continue;
        }
        for j in 0..store.get(id).value.numel() {
            let orig = store.get(id).value.data()[j];
            store.get_mut(id).value.data_mut()[j] = S::of(orig.as_f64() + h);
            let up = eval(store, &mut loss)?;
            store.get_mut(id).value.data_mut()[j] = S::of(orig.as_f64() - h);
            let down = eval(store, &mut loss)?;
            store.get_mut(id).value.data_mut()[j] = orig;

            let fd = (up - down) / (2.0 * h);
            let ad = store.get(id).grad.data()[j].as_f64();
            let e = rel_err(fd, ad);
            report.checked += 1;
            if e > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = e;
                report.worst = Some((store.get(id).name.clone(), j, fd, ad));
            }
        }
    }
    Ok(report)
}
