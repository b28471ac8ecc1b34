use std::collections::BTreeMap;

use super::{ParamStore, Tape, Var};
use crate::Result;

/// Per-block comparison of analytic and central-difference gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `‖analytic − numeric‖₂ / max(‖numeric‖₂, floor)` per parameter block.
    pub relative_error: BTreeMap<String, f64>,
}

impl GradCheck {
    pub fn worst(&self) -> (String, f64) {
        self.relative_error.iter().map(|(k, v)| (k.clone(), *v)).fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a })
    }
}

/// Compares gradients of the scalar built by `f` for every block in `store`
/// whose name starts with one of `prefixes` (all blocks when empty).
pub fn check_gradients<F>(store: &ParamStore, prefixes: &[&str], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let analytic = tape.backward(loss)?.param_grads(&tape, store);
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, s)?;
        Ok(t.scalar(l))
    };
    let mut relative_error = BTreeMap::new();
    let mut probe = store.clone();
    for (name, block) in store.iter() {
        if !prefixes.is_empty() && !prefixes.iter().any(|p| name.starts_with(p)) {
            continue;
        }
        let mut diff2 = 0.0;
        let mut norm2 = 0.0;
        for i in 0..block.data.len() {
            let x0 = block.data[i];
            probe.get_mut(name)?.data[i] = x0 + h;
            let up = eval(&probe)?;
            probe.get_mut(name)?.data[i] = x0 - h;
            let down = eval(&probe)?;
            probe.get_mut(name)?.data[i] = x0;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[name][i];
            diff2 += (a - numeric) * (a - numeric);
            norm2 += numeric * numeric;
        }
        relative_error.insert(name.clone(), diff2.sqrt() / norm2.sqrt().max(1e-6));
    }
    Ok(GradCheck { relative_error })
}
