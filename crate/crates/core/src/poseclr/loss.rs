use crate::error::{contract_err, shape_err, Result};
use crate::param::ParamStore;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Contrastive loss of query `q` (`[1×D]`, unit) against unit positives
/// `[P×D]` and negatives `[K×D]`:
///
/// `mean_p −ln( exp(q·p/τ) / (exp(q·p/τ) + Σ_k exp(q·n_k/τ)) )`
///
/// `negatives = None` means an empty bank.
pub fn info_nce<F: Real>(
    tape: &mut Tape<F>,
    q: Var,
    positives: &Tensor<F>,
    negatives: Option<&Tensor<F>>,
    temperature: f64,
) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(contract_err!("temperature must be positive"));
    }
    let d = tape.shape(q).iter().product::<usize>();
    if tape.shape(q) != [1, d] {
        return Err(shape_err!("query must be [1×D], got {:?}", tape.shape(q)));
    }
    let (p, pd) = positives.dims2()?;
    if p == 0 {
        return Err(contract_err!("at least one positive is required"));
    }
    if pd != d {
        return Err(shape_err!("positives are {pd}-d, query is {d}-d"));
    }
    let pos_t = tape.constant(crate::tensor::ops::transpose(positives)?);
    let s_pos = tape.matmul(q, pos_t)?;
    let s_neg = match negatives {
        Some(n) => {
            let (_, nd) = n.dims2()?;
            if nd != d {
                return Err(shape_err!("negatives are {nd}-d, query is {d}-d"));
            }
            let neg_t = tape.constant(crate::tensor::ops::transpose(n)?);
            Some(tape.matmul(q, neg_t)?)
        }
        None => None,
    };
    let inv_t = F::of(1.0 / temperature);
    let mut total = None;
    for i in 0..p {
        let sp = tape.slice_cols(s_pos, i, 1)?;
        let logits = match s_neg {
            Some(sn) => tape.concat_cols(&[sp, sn])?,
            None => sp,
        };
        let logits = tape.scale(logits, inv_t);
        let log_p = tape.log_softmax_lastdim(logits);
        let first = tape.select(log_p, 0)?;
        total = Some(match total {
            None => first,
            Some(acc) => tape.add(acc, first)?,
        });
    }
    let total = total.expect("p > 0");
    Ok(tape.scale(total, F::of(-1.0 / p as f64)))
}

/// Plain-value convenience wrapper around [`info_nce`].
pub fn info_nce_value(
    q: &[f64],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    temperature: f64,
) -> Result<f64> {
    let rows = |vs: &[Vec<f64>]| -> Result<Tensor<f64>> {
        let flat: Vec<f64> = vs.iter().flatten().copied().collect();
        Tensor::new(&[vs.len(), q.len()], flat)
    };
    let mut tape = Tape::<f64>::no_grad();
    let qv = tape.constant(Tensor::new(&[1, q.len()], q.to_vec())?);
    let pos = if positives.is_empty() {
        return Err(contract_err!("at least one positive is required"));
    } else {
        rows(positives)?
    };
    let neg = if negatives.is_empty() {
        None
    } else {
        Some(rows(negatives)?)
    };
    let l = info_nce(&mut tape, qv, &pos, neg.as_ref(), temperature)?;
    Ok(tape.value(l).data()[0])
}

/// `θ̂ ← m·θ̂ + (1 − m)·θ` for every tensor.
pub fn momentum_update<F: Real>(
    online: &ParamStore<F>,
    momentum: &mut ParamStore<F>,
    m: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(contract_err!("momentum {m} outside [0, 1]"));
    }
    momentum.check_compatible(online)?;
    let (mf, rest) = (F::of(m), F::of(1.0 - m));
    let ids: Vec<_> = momentum.ids().collect();
    for id in ids {
        let src = online.get(id).data();
        for (dst, &s) in momentum.get_mut(id).data_mut().iter_mut().zip(src) {
            *dst = mf * *dst + rest * s;
        }
    }
    Ok(())
}
