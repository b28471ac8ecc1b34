use std::fmt;

use serde::{Deserialize, Serialize};

use crate::so3::MAX_DEGREE;
use crate::{Error, Result};

/// Layout of a spherical feature row: ordered `(degree, multiplicity)` pairs.
///
/// Rows are degree-major, channel-minor, order-innermost: channel `c` of
/// degree `l` occupies `2l+1` contiguous slots starting at
/// `offset(l) + c·(2l+1)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IrrepsSpec {
    irreps: Vec<(usize, usize)>,
}

impl IrrepsSpec {
    pub fn new(irreps: Vec<(usize, usize)>) -> Result<Self> {
        for w in irreps.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(Error::Contract(format!("degrees must be strictly increasing: {irreps:?}")));
            }
        }
        if let Some(&(l, _)) = irreps.last() {
            if l > MAX_DEGREE {
                return Err(Error::Capability(format!("degree {l} exceeds supported maximum {MAX_DEGREE}")));
            }
        }
        if irreps.iter().any(|&(_, m)| m == 0) {
            return Err(Error::Contract(format!("multiplicities must be positive: {irreps:?}")));
        }
        Ok(Self { irreps })
    }

    /// Every degree `0..=lmax` with the same multiplicity.
    pub fn uniform(lmax: usize, mult: usize) -> Self {
        Self::new((0..=lmax).map(|l| (l, mult)).collect()).expect("valid uniform spec")
    }

    /// Only type-0 channels.
    pub fn scalars(mult: usize) -> Self {
        Self::uniform(0, mult)
    }

    pub fn irreps(&self) -> &[(usize, usize)] {
        &self.irreps
    }

    pub fn lmax(&self) -> usize {
        self.irreps.last().map(|p| p.0).unwrap_or(0)
    }

    pub fn width(&self) -> usize {
        self.irreps.iter().map(|&(l, m)| m * (2 * l + 1)).sum()
    }

    pub fn multiplicity(&self, l: usize) -> usize {
        self.irreps.iter().find(|p| p.0 == l).map(|p| p.1).unwrap_or(0)
    }

    /// Start column of degree `l` (or where it would be inserted).
    pub fn offset(&self, l: usize) -> usize {
        self.irreps.iter().take_while(|p| p.0 < l).map(|&(l, m)| m * (2 * l + 1)).sum()
    }

    pub fn num_channels(&self) -> usize {
        self.irreps.iter().map(|p| p.1).sum()
    }

    /// Number of channels with degree above zero.
    pub fn num_gated(&self) -> usize {
        self.irreps.iter().filter(|p| p.0 > 0).map(|p| p.1).sum()
    }

    pub fn num_scalars(&self) -> usize {
        self.multiplicity(0)
    }

    /// `(degree, channel, start column)` for every channel in layout order.
    pub fn channels(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = 0;
        self.irreps.iter().flat_map(move |&(l, m)| {
            let start = off;
            off += m * (2 * l + 1);
            (0..m).map(move |c| (l, c, start + c * (2 * l + 1)))
        })
    }

    /// Degree-wise channel concatenation: for each degree, `self`'s channels
    /// come first, then `other`'s.
    pub fn concat(&self, other: &IrrepsSpec) -> IrrepsSpec {
        let lmax = self.lmax().max(other.lmax());
        let irreps = (0..=lmax)
            .filter_map(|l| {
                let m = self.multiplicity(l) + other.multiplicity(l);
                (m > 0).then_some((l, m))
            })
            .collect();
        IrrepsSpec { irreps }
    }

    pub fn truncate(&self, lmax: usize) -> IrrepsSpec {
        IrrepsSpec { irreps: self.irreps.iter().copied().filter(|p| p.0 <= lmax).collect() }
    }
}

impl fmt::Display for IrrepsSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.irreps.iter().map(|(l, m)| format!("{m}x{l}")).collect();
        write!(f, "{}", parts.join("+"))
    }
}
