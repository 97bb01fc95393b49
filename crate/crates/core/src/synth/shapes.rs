//! Tabular "colored shapes" dataset.
//!
//! Two latent attributes, shape ∈ {square, triangle} and color ∈ {red,
//! green, blue}, each carry a small continuous latent code (attribute
//! prototype plus per-sample jitter). The codes go through a fixed random
//! two-layer tanh network into ℝ^m and Gaussian observation noise is added.
//!
//! The training split holds three classes, (red, square), (green, triangle)
//! and (blue, triangle), so color alone determines the class. The held-out
//! split holds the unseen (red, triangle) combination.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::rng::{streams, Rng};
use crate::diff::Matrix;
use crate::error::{Error, Result};

pub const SHAPE_NAMES: [&str; 2] = ["square", "triangle"];
pub const COLOR_NAMES: [&str; 3] = ["red", "green", "blue"];

/// `(shape, color)` of the three training classes, indexed by class label.
pub const TRAIN_COMBOS: [(usize, usize); 3] = [(0, 0), (1, 1), (1, 2)];
/// (red, triangle)
pub const HELDOUT_COMBO: (usize, usize) = (1, 0);

/// Every `(shape, color)` pair.
pub fn all_combos() -> Vec<(usize, usize)> {
    (0..SHAPE_NAMES.len())
        .flat_map(|s| (0..COLOR_NAMES.len()).map(move |c| (s, c)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Heldout,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapesConfig {
    pub n_per_class: usize,
    pub noise_sigma: f64,
    pub embed_dim: usize,
    pub hidden: usize,
    /// Separation of the two shape prototypes in latent space.
    pub shape_gain: f64,
    /// Separation of the three color prototypes in latent space.
    pub color_gain: f64,
    /// Std of the per-sample jitter on the two shape coordinates.
    pub shape_jitter: f64,
    /// Std of the per-sample jitter on the three color coordinates.
    pub color_jitter: f64,
    pub seed: u64,
}

impl Default for ShapesConfig {
    fn default() -> Self {
        Self {
            n_per_class: 2000,
            noise_sigma: 0.01,
            embed_dim: 16,
            hidden: 32,
            shape_gain: 0.8,
            color_gain: 3.0,
            shape_jitter: 0.3,
            color_jitter: 0.5,
            seed: 0,
        }
    }
}

/// Latent code width: one-hot shape (2) followed by one-hot color (3).
pub const LATENT_DIM: usize = 5;

/// The fixed random map from latent codes to observed features.
#[derive(Clone, Debug)]
pub struct ShapesEmbedding {
    cfg: ShapesConfig,
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
}

impl ShapesEmbedding {
    pub fn new(cfg: &ShapesConfig) -> Result<Self> {
        if cfg.embed_dim < 8 {
            return Err(Error::config(format!(
                "embedding dimension must be at least 8, got {}",
                cfg.embed_dim
            )));
        }
        if cfg.noise_sigma < 0.0 || cfg.shape_jitter < 0.0 || cfg.color_jitter < 0.0 {
            return Err(Error::config("noise levels must be non-negative"));
        }
        let mut rng = Rng::new(cfg.seed, streams::EMBEDDING);
        let mut draw = |rows: usize, cols: usize, scale: f64| {
            let data = (0..rows * cols).map(|_| scale * rng.normal()).collect();
            Matrix::from_vec(rows, cols, data).expect("sized buffer")
        };
        let w1 = draw(cfg.hidden, LATENT_DIM, 1.0 / (LATENT_DIM as f64).sqrt());
        let b1 = draw(1, cfg.hidden, 0.5).into_data();
        let w2 = draw(cfg.embed_dim, cfg.hidden, (3.0 / cfg.hidden as f64).sqrt());
        Ok(Self {
            cfg: cfg.clone(),
            w1,
            b1,
            w2,
        })
    }

    pub fn config(&self) -> &ShapesConfig {
        &self.cfg
    }

    pub fn latent(&self, shape: usize, color: usize, rng: &mut Rng) -> [f64; LATENT_DIM] {
        let mut u = [0.0; LATENT_DIM];
        u[shape] = self.cfg.shape_gain;
        u[2 + color] = self.cfg.color_gain;
        for (j, v) in u.iter_mut().enumerate() {
            let s = if j < 2 {
                self.cfg.shape_jitter
            } else {
                self.cfg.color_jitter
            };
            *v += s * rng.normal();
        }
        u
    }

    /// Noise-free features of each latent row.
    pub fn embed_clean(&self, latent: &Matrix) -> Result<Matrix> {
        let mut h = latent.matmul_t(&self.w1)?;
        for i in 0..h.rows() {
            for (v, b) in h.row_mut(i).iter_mut().zip(&self.b1) {
                *v = (*v + b).tanh();
            }
        }
        h.matmul_t(&self.w2)
    }

    /// Features of each latent row with fresh observation noise.
    pub fn embed(&self, latent: &Matrix, rng: &mut Rng) -> Result<Matrix> {
        let mut x = self.embed_clean(latent)?;
        let s = self.cfg.noise_sigma;
        for v in x.data_mut() {
            *v += s * rng.normal();
        }
        Ok(x)
    }

    /// Samples `n_each` rows for every combo in `combos`, grouped by combo.
    pub fn sample(
        &self,
        combos: &[(usize, usize)],
        n_each: usize,
        rng: &mut Rng,
    ) -> Result<Sample> {
        let n = combos.len() * n_each;
        let mut latent = Matrix::zeros(n, LATENT_DIM);
        let mut shape = Vec::with_capacity(n);
        let mut color = Vec::with_capacity(n);
        let mut row = 0;
        for &(s, c) in combos {
            for _ in 0..n_each {
                latent.row_mut(row).copy_from_slice(&self.latent(s, c, rng));
                shape.push(s);
                color.push(c);
                row += 1;
            }
        }
        let features = self.embed(&latent, rng)?;
        Ok(Sample {
            latent,
            features,
            shape,
            color,
        })
    }
}

/// Rows drawn from the embedding together with their attributes.
#[derive(Clone, Debug)]
pub struct Sample {
    pub latent: Matrix,
    pub features: Matrix,
    pub shape: Vec<usize>,
    pub color: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub features: Matrix,
    /// Pre-embedding latent codes, kept so a row can be re-observed with fresh noise.
    pub latent: Matrix,
    pub shape: Vec<usize>,
    pub color: Vec<usize>,
    /// Class index for training rows, `None` for held-out rows.
    pub class: Vec<Option<usize>>,
    pub split: Vec<Split>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.split[i] == split)
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        TRAIN_COMBOS.len()
    }

    /// CSV with header `f0..f{m-1},shape,color,class,split`; held-out rows leave `class` empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let m = self.features.cols();
        let header: Vec<String> = (0..m)
            .map(|j| format!("f{j}"))
            .chain(["shape", "color", "class", "split"].map(String::from))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut fields: Vec<String> =
                self.features.row(i).iter().map(|v| v.to_string()).collect();
            fields.push(self.shape[i].to_string());
            fields.push(self.color[i].to_string());
            fields.push(self.class[i].map(|c| c.to_string()).unwrap_or_default());
            fields.push(self.split[i].as_str().to_string());
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Training split (three color-determined classes, `n_per_class` each)
/// followed by `n_per_class` held-out (red, triangle) rows.
pub fn gen_shapes_dataset(cfg: &ShapesConfig) -> Result<(LabeledDataset, ShapesEmbedding)> {
    if cfg.n_per_class == 0 {
        return Err(Error::config("n_per_class must be positive"));
    }
    let emb = ShapesEmbedding::new(cfg)?;
    let mut rng = Rng::new(cfg.seed, streams::DATA);
    let train = emb.sample(&TRAIN_COMBOS, cfg.n_per_class, &mut rng)?;
    let held = emb.sample(&[HELDOUT_COMBO], cfg.n_per_class, &mut rng)?;

    let n_train = train.features.rows();
    let class = (0..n_train)
        .map(|i| Some(i / cfg.n_per_class))
        .chain(std::iter::repeat_n(None, held.features.rows()))
        .collect();
    let split = std::iter::repeat_n(Split::Train, n_train)
        .chain(std::iter::repeat_n(Split::Heldout, held.features.rows()))
        .collect();
    let ds = LabeledDataset {
        features: train.features.vstack(&held.features)?,
        latent: train.latent.vstack(&held.latent)?,
        shape: [train.shape, held.shape].concat(),
        color: [train.color, held.color].concat(),
        class,
        split,
    };
    Ok((ds, emb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ShapesConfig {
        ShapesConfig {
            n_per_class: 50,
            ..ShapesConfig::default()
        }
    }

    #[test]
    fn train_split_is_balanced_over_three_classes() {
        let (ds, _) = gen_shapes_dataset(&small()).unwrap();
        let train = ds.indices(Split::Train);
        assert_eq!(train.len(), 150);
        for c in 0..3 {
            let count = train.iter().filter(|&&i| ds.class[i] == Some(c)).count();
            assert_eq!(count, 50);
        }
        for &i in &train {
            let (s, col) = TRAIN_COMBOS[ds.class[i].unwrap()];
            assert_eq!((ds.shape[i], ds.color[i]), (s, col));
        }
    }

    #[test]
    fn heldout_is_red_triangles_only() {
        let (ds, _) = gen_shapes_dataset(&small()).unwrap();
        let held = ds.indices(Split::Heldout);
        assert_eq!(held.len(), 50);
        for i in held {
            assert_eq!((ds.shape[i], ds.color[i]), HELDOUT_COMBO);
            assert_eq!(ds.class[i], None);
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let (a, _) = gen_shapes_dataset(&small()).unwrap();
        let (b, _) = gen_shapes_dataset(&small()).unwrap();
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn csv_header_and_rows() {
        let (ds, _) = gen_shapes_dataset(&small()).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("f0,f1,"));
        assert!(header.ends_with("f15,shape,color,class,split"));
        assert_eq!(lines.clone().count(), 200);
        assert!(lines.last().unwrap().ends_with(",1,0,,heldout"));
    }

    #[test]
    fn rejects_narrow_embedding() {
        let cfg = ShapesConfig {
            embed_dim: 4,
            ..small()
        };
        assert!(gen_shapes_dataset(&cfg).is_err());
    }
}
