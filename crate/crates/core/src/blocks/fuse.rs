use super::Conv;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, Init};

/// Projects four pyramid maps to `c` channels, upsamples to the finest grid,
/// concatenates and projects `4c → c`.
#[derive(Debug, Clone)]
pub struct MultiScaleFuse {
    pub proj: Vec<Conv>,
    pub out: Conv,
}

impl MultiScaleFuse {
    pub fn new(init: &mut Init<'_>, name: &str, in_channels: [usize; 4], c: usize) -> Self {
        init.scope(name, |init| Self {
            proj: in_channels
                .iter()
                .enumerate()
                .map(|(i, &ci)| Conv::new(init, &format!("proj{}", i + 1), ci, c, 1, 1))
                .collect(),
            out: Conv::new(init, "out", 4 * c, c, 1, 1),
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, maps: [Var; 4]) -> Result<Var> {
        let s1 = g.shape(maps[0]).to_vec();
        if s1.len() != 3 {
            return Err(Error::shape("multiscale_fuse", &s1, &[]));
        }
        let (h, w) = (s1[1], s1[2]);
        let mut parts = Vec::with_capacity(4);
        for (conv, &m) in self.proj.iter().zip(&maps) {
            let sm = g.shape(m).to_vec();
            if sm.len() != 3 || sm[1] > h || sm[2] > w {
                return Err(Error::shape("multiscale_fuse", &sm, &s1));
            }
            let f = conv.forward(g, p, m)?;
            let f = if sm[1] == h && sm[2] == w { f } else { g.bilinear_upsample(f, h, w)? };
            parts.push(f);
        }
        let cat = g.concat(&parts, 0)?;
        self.out.forward(g, p, cat)
    }
}
