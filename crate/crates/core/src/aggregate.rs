//! Average pooling of stored layer sums and multi-layer concatenation.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::corpus::{Corpus, UserEmbeddings};
use crate::error::{Error, Result};

/// Ordered, duplicate-free list of 1-based layer indices.
///
/// Order is the selection order and only affects column layout.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LayerSet(Vec<usize>);

impl LayerSet {
    pub fn new(layers: Vec<usize>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Usage("layer set must not be empty".into()));
        }
        if layers.contains(&0) {
            return Err(Error::Usage("layer indices are 1-based".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if layers[..i].contains(l) {
                return Err(Error::Usage(format!("layer {l} listed twice")));
            }
        }
        Ok(LayerSet(layers))
    }

    pub fn single(layer: usize) -> Result<Self> {
        Self::new(vec![layer])
    }

    pub fn layers(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, layer: usize) -> bool {
        self.0.contains(&layer)
    }

    /// This set with `layer` appended.
    pub fn with(&self, layer: usize) -> Result<Self> {
        let mut v = self.0.clone();
        v.push(layer);
        Self::new(v)
    }

    pub fn check_bounds(&self, num_layers: usize) -> Result<()> {
        match self.0.iter().find(|&&l| l > num_layers) {
            Some(l) => Err(Error::Usage(format!(
                "layer index {l} out of range: corpus has L={num_layers} layers"
            ))),
            None => Ok(()),
        }
    }

    /// Display form with layers ascending, `L16+18+19`.
    pub fn plus_label(&self) -> String {
        let mut sorted = self.0.clone();
        sorted.sort_unstable();
        let parts: Vec<String> = sorted.iter().map(|l| l.to_string()).collect();
        format!("L{}", parts.join("+"))
    }
}

/// Semicolon-separated selection order, e.g. `19;16;24`.
impl fmt::Display for LayerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|l| l.to_string()).collect();
        f.write_str(&parts.join(";"))
    }
}

/// Accepts `19;16`, `19,16`, `19+16` and `L19+16`.
impl FromStr for LayerSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().trim_start_matches(['L', 'l']);
        let layers = s
            .split([';', ',', '+'])
            .map(|p| {
                p.trim()
                    .trim_start_matches(['L', 'l'])
                    .parse::<usize>()
                    .map_err(|_| Error::Usage(format!("invalid layer index {p:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        LayerSet::new(layers)
    }
}

/// Mean of all token vectors of `u` at 1-based `layer`.
pub fn pool_user(u: &UserEmbeddings, layer: usize, hidden_dim: usize) -> Result<Vec<f64>> {
    if u.total_token_count == 0 {
        return Err(Error::Data(format!(
            "user {}: zero token count, cannot pool",
            u.user_id
        )));
    }
    let num_layers = u.layer_sums.len() / hidden_dim;
    if layer == 0 || layer > num_layers {
        return Err(Error::Usage(format!(
            "layer index {layer} out of range: L={num_layers}"
        )));
    }
    let count = u.total_token_count as f64;
    Ok(u.layer(layer, hidden_dim)
        .iter()
        .map(|&s| f64::from(s) / count)
        .collect())
}

/// Regression inputs for one representation: one row per user in corpus
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub user_ids: Vec<String>,
    pub layer_set: LayerSet,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl DesignMatrix {
    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    /// `user_id` followed by one column per feature.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["user_id".to_string()];
        let hidden = self.ncols() / self.layer_set.len().max(1);
        for l in self.layer_set.layers() {
            for j in 0..hidden {
                header.push(format!("l{l}_{j}"));
            }
        }
        wtr.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
        for (i, id) in self.user_ids.iter().enumerate() {
            let mut rec = Vec::with_capacity(self.ncols() + 1);
            rec.push(id.clone());
            rec.extend(self.x.row(i).iter().map(|v| v.to_string()));
            wtr.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
        }
        wtr.flush().map_err(|e| Error::Data(e.to_string()))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Concatenate pooled layers in `ls` order for every user of `c`.
pub fn build_design(c: &Corpus, ls: &LayerSet) -> Result<DesignMatrix> {
    ls.check_bounds(c.num_layers())?;
    let h = c.hidden_dim();
    let n = c.len();
    let p = h * ls.len();
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut y = DVector::<f64>::zeros(n);
    for (i, u) in c.users.iter().enumerate() {
        for (slot, &layer) in ls.layers().iter().enumerate() {
            let pooled = pool_user(u, layer, h)?;
            for (j, v) in pooled.into_iter().enumerate() {
                x[(i, slot * h + j)] = v;
            }
        }
        y[i] = c
            .outcomes
            .get(&u.user_id)
            .ok_or_else(|| Error::Data(format!("user {} has no outcome", u.user_id)))?;
    }
    Ok(DesignMatrix {
        user_ids: c.user_ids(),
        layer_set: ls.clone(),
        x,
        y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Manifest, OutcomeTable, Split};

    fn corpus(l: usize, h: usize) -> Corpus {
        let users = (0..3)
            .map(|i| UserEmbeddings {
                user_id: format!("u{i}"),
                total_token_count: 2 + i as u64,
                layer_sums: (0..l * h).map(|k| (k + 10 * i) as f32).collect(),
            })
            .collect();
        let outcomes = OutcomeTable {
            scores: (0..3).map(|i| (format!("u{i}"), i as f64)).collect(),
        };
        Corpus::assemble(Manifest::new("t", l, h), users, outcomes, Split::Train, 0)
    }

    #[test]
    fn layer_set_parsing_and_rules() {
        let ls: LayerSet = "19;16;24".parse().unwrap();
        assert_eq!(ls.layers(), &[19, 16, 24]);
        assert_eq!(ls.to_string(), "19;16;24");
        assert_eq!("L16+18+19".parse::<LayerSet>().unwrap().layers(), &[16, 18, 19]);
        assert_eq!(ls.plus_label(), "L16+19+24");
        assert!(LayerSet::new(vec![]).is_err());
        assert!(LayerSet::new(vec![3, 3]).is_err());
        assert!(LayerSet::new(vec![0]).is_err());
        assert!("3;x".parse::<LayerSet>().is_err());
    }

    #[test]
    fn pooling_single_token_is_identity() {
        let u = UserEmbeddings {
            user_id: "a".into(),
            total_token_count: 1,
            layer_sums: vec![0.0, 0.0, 1.5, -2.0, 0.0, 0.0],
        };
        assert_eq!(pool_user(&u, 2, 2).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn pooling_divides_by_total_count() {
        let u = UserEmbeddings {
            user_id: "a".into(),
            total_token_count: 4,
            layer_sums: vec![4.0, 2.0],
        };
        assert_eq!(pool_user(&u, 1, 2).unwrap(), vec![1.0, 0.5]);
    }

    #[test]
    fn pooling_errors() {
        let u = UserEmbeddings {
            user_id: "a".into(),
            total_token_count: 0,
            layer_sums: vec![1.0],
        };
        assert!(matches!(pool_user(&u, 1, 1), Err(Error::Data(_))));
        let u = UserEmbeddings {
            total_token_count: 1,
            ..u
        };
        assert!(matches!(pool_user(&u, 2, 1), Err(Error::Usage(_))));
    }

    #[test]
    fn design_layout_concatenates_in_order() {
        let c = corpus(4, 3);
        let d = build_design(&c, &"3;1".parse().unwrap()).unwrap();
        assert_eq!((d.nrows(), d.ncols()), (3, 6));
        let u1 = &c.users[1];
        let first: Vec<f64> = d.x.row(1).iter().take(3).copied().collect();
        assert_eq!(first, pool_user(u1, 3, 3).unwrap());
        let second: Vec<f64> = d.x.row(1).iter().skip(3).copied().collect();
        assert_eq!(second, pool_user(u1, 1, 3).unwrap());
        assert_eq!(d.y.as_slice(), &[0.0, 1.0, 2.0]);

        let swapped = build_design(&c, &"1;3".parse().unwrap()).unwrap();
        assert_eq!(swapped.x.columns(0, 3), d.x.columns(3, 3));
        assert_eq!(swapped.x.columns(3, 3), d.x.columns(0, 3));
    }

    #[test]
    fn design_rejects_out_of_range_layer() {
        let c = corpus(4, 3);
        let err = build_design(&c, &LayerSet::single(5).unwrap()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('5') && msg.contains("L=4"), "{msg}");
    }

    #[test]
    fn design_csv_has_header_and_rows() {
        let c = corpus(2, 2);
        let d = build_design(&c, &LayerSet::single(2).unwrap()).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("user_id,l2_0,l2_1"));
        assert_eq!(lines.count(), 3);
    }
}
