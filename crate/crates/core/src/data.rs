//! Labeled tabular data and planted-structure fixtures.
//!
//! CSV files carry a header naming schema features (any column order) and
//! optionally a label column holding class indices. Planted networks have a
//! known k-discrimination landscape and serve as ground truth for search,
//! explanation and mitigation.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::bucket_count;
use crate::error::{Error, Result};
use crate::model::{Activation, DenseLayer, Network};
use crate::rng::{streams, SeedStream};
use crate::schema::{FeatureSchema, Instance, RawValue};

pub const DEFAULT_LABEL_COLUMN: &str = "label";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    /// Class index per instance, when the source carried labels.
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(instances: Vec<Instance>, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != instances.len() {
                return Err(Error::Dimension {
                    expected: instances.len(),
                    got: l.len(),
                });
            }
        }
        Ok(Self { instances, labels })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema, label_column: Option<&str>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, schema, label_column)
    }

    /// Parses CSV text; line numbers in errors count the header as line 1.
    pub fn read_csv<R: Read>(reader: R, schema: &FeatureSchema, label_column: Option<&str>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut columns = Vec::with_capacity(schema.features().len());
        for f in schema.features() {
            let col = headers.iter().position(|h| h == f.name).ok_or_else(|| Error::Data {
                line: 1,
                feature: Some(f.name.clone()),
                msg: "column missing from header".into(),
            })?;
            columns.push(col);
        }
        let label_name = label_column.unwrap_or(DEFAULT_LABEL_COLUMN);
        let label_col = headers.iter().position(|h| h == label_name);
        if label_column.is_some() && label_col.is_none() {
            return Err(Error::Data {
                line: 1,
                feature: None,
                msg: format!("label column `{label_name}` missing from header"),
            });
        }
        let mut instances = Vec::new();
        let mut labels = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let line = row + 2;
            let record = record?;
            let mut values = Vec::with_capacity(columns.len());
            for (i, &col) in columns.iter().enumerate() {
                let name = &schema.feature(i).name;
                let data_err = |msg: String| Error::Data {
                    line,
                    feature: Some(name.clone()),
                    msg,
                };
                let cell = record.get(col).ok_or_else(|| data_err("missing value".into()))?;
                let raw = match cell.parse::<f64>() {
                    Ok(v) if !schema.feature(i).is_categorical() => RawValue::Number(v),
                    _ => RawValue::Label(cell.to_string()),
                };
                let value = schema.parse_value(i, &raw).map_err(data_err)?;
                values.push(value);
            }
            let instance = Instance { values };
            schema.validate(&instance).map_err(|e| Error::Data {
                line,
                feature: None,
                msg: e.to_string(),
            })?;
            instances.push(instance);
            if let Some(col) = label_col {
                let cell = record.get(col).unwrap_or("");
                let label = cell.parse::<usize>().map_err(|_| Error::Data {
                    line,
                    feature: Some(label_name.to_string()),
                    msg: format!("label `{cell}` is not a class index"),
                })?;
                labels.push(label);
            }
        }
        Self::new(instances, label_col.map(|_| labels))
    }

    pub fn write_csv<W: Write>(&self, writer: W, schema: &FeatureSchema) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = schema.features().iter().map(|f| f.name.clone()).collect();
        if self.labels.is_some() {
            header.push(DEFAULT_LABEL_COLUMN.into());
        }
        w.write_record(&header)?;
        for (i, inst) in self.instances.iter().enumerate() {
            let mut row: Vec<String> = schema
                .features()
                .iter()
                .zip(&inst.values)
                .map(|(f, &v)| f.format_value(v))
                .collect();
            if let Some(l) = &self.labels {
                row.push(l[i].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file, schema)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            instances: indices.iter().map(|&i| self.instances[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Reproducible shuffled split; returns `(train, test)`.
    pub fn train_test_split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..=1.0).contains(&test_fraction) {
            return Err(Error::InvalidArgument(format!("test fraction {test_fraction} outside [0, 1]")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut SeedStream::new(seed).rng(streams::SPLIT));
        let n_test = (self.len() as f64 * test_fraction).round() as usize;
        let (test, train) = idx.split_at(n_test);
        Ok((self.subset(train), self.subset(test)))
    }

    /// `n` uniform instances labeled by `network`, each label flipped with probability `flip`.
    pub fn sample_labeled(
        schema: &FeatureSchema,
        network: &Network<f64>,
        n: usize,
        flip: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = SeedStream::new(seed).rng(streams::DATASET);
        let classes = network.class_count();
        let mut instances = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let x = schema.random_instance(&mut rng)?;
            let mut y = network.predict_label(&schema.encode::<f64>(&x)?)?;
            if rng.random_bool(flip.clamp(0.0, 1.0)) {
                y = (y + 1) % classes;
            }
            instances.push(x);
            labels.push(y);
        }
        Self::new(instances, Some(labels))
    }
}

/// Axis-aligned core on a numeric non-protected feature, in raw units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantInterval {
    pub feature: String,
    pub lower: f64,
    pub upper: f64,
}

/// Planted discrimination structure.
///
/// Inside the core region every protected combination `c` scores
/// `base_score + offsets[c]`; away from it all scores return to `base_score`.
/// The transition is linear in logit space over an L1 distance (encoded
/// units) of `ramp_width`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub region: Vec<PlantInterval>,
    pub base_score: f64,
    pub offsets: Vec<f64>,
    pub ramp_width: f64,
}

impl PlantSpec {
    /// Scores `base + step·(c mod levels)` over `k` combinations, with
    /// `base = ε/2` and `step = ε`, so the core reaches exactly `levels` buckets.
    pub fn graded(region: Vec<PlantInterval>, k: usize, levels: usize, epsilon: f64, ramp_width: f64) -> Self {
        Self {
            region,
            base_score: epsilon / 2.0,
            offsets: (0..k).map(|c| epsilon * (c % levels.max(1)) as f64).collect(),
            ramp_width,
        }
    }

    pub fn core_scores(&self) -> Vec<f64> {
        self.offsets.iter().map(|o| self.base_score + o).collect()
    }

    /// k value of any instance inside the core.
    pub fn expected_max_k(&self, epsilon: f64) -> usize {
        let n = bucket_count(epsilon);
        let mut buckets: Vec<usize> = self
            .core_scores()
            .iter()
            .map(|s| ((s / epsilon + 1e-9).floor() as usize).min(n - 1))
            .collect();
        buckets.sort_unstable();
        buckets.dedup();
        buckets.len()
    }

    /// True when `instance` lies inside the core.
    pub fn contains(&self, schema: &FeatureSchema, instance: &Instance) -> bool {
        self.region.iter().all(|r| {
            schema.feature_index(&r.feature).is_some_and(|f| {
                let v = instance.values[f].as_num();
                v >= r.lower && v <= r.upper
            })
        })
    }

    /// Fraction of the non-protected domain covered by the core, computed
    /// the same way as explanation coverage (continuous widths normalized,
    /// integral features by point count).
    pub fn core_volume(&self, schema: &FeatureSchema) -> f64 {
        self.region
            .iter()
            .map(|r| {
                let f = schema.feature_index(&r.feature).expect("validated region");
                let (lo, hi, integral) = schema.feature(f).numeric_range().expect("numeric");
                if integral {
                    let inside = (r.upper.floor() - r.lower.ceil() + 1.0).max(0.0);
                    inside / (hi.floor() - lo.ceil() + 1.0)
                } else {
                    (r.upper - r.lower) / (hi - lo)
                }
            })
            .product()
    }

    fn check(&self, schema: &FeatureSchema) -> Result<()> {
        let err = |m: String| Err(Error::Plant(m));
        if self.offsets.len() != schema.k() {
            return err(format!("{} offsets for {} protected combinations", self.offsets.len(), schema.k()));
        }
        if let Some(&f) = schema.protected_features().iter().find(|&&f| !schema.feature(f).is_categorical()) {
            return err(format!("protected feature `{}` must be categorical", schema.feature(f).name));
        }
        if self.region.is_empty() {
            return err("region constrains no feature".into());
        }
        for r in &self.region {
            let Some(f) = schema.feature_index(&r.feature) else {
                return err(format!("unknown feature `{}`", r.feature));
            };
            let spec = schema.feature(f);
            let Some((lo, hi, _)) = spec.numeric_range().filter(|_| !spec.protected) else {
                return err(format!("region feature `{}` must be numeric and non-protected", r.feature));
            };
            if !(r.lower <= r.upper && r.lower >= lo && r.upper <= hi) {
                return err(format!("interval on `{}` outside the feature domain", r.feature));
            }
        }
        if !(self.ramp_width > 0.0) {
            return err("ramp width must be positive".into());
        }
        for s in self.core_scores().into_iter().chain([self.base_score]) {
            if !(s > 0.0 && s < 1.0) {
                return err(format!("planted score {s} outside (0, 1)"));
            }
        }
        Ok(())
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Builds a two-hidden-layer network realizing `spec` exactly; `seed` only
/// permutes hidden units.
pub fn make_planted_network(schema: &FeatureSchema, spec: &PlantSpec, seed: u64) -> Result<Network<f64>> {
    spec.check(schema)?;
    let width = schema.input_width();
    let mut l1_w: Vec<Vec<f64>> = Vec::new();
    let mut l1_b: Vec<f64> = Vec::new();
    // distance hinges
    let mut hinge_units = Vec::new();
    for r in &spec.region {
        let f = schema.feature_index(&r.feature).expect("checked");
        let (lo, hi, _) = schema.feature(f).numeric_range().expect("checked");
        let slot = schema.slots(f).start;
        let a = (r.lower - lo) / (hi - lo);
        let b = (r.upper - lo) / (hi - lo);
        let mut below = vec![0.0; width];
        below[slot] = -1.0;
        hinge_units.push(l1_w.len());
        l1_w.push(below);
        l1_b.push(a);
        let mut above = vec![0.0; width];
        above[slot] = 1.0;
        hinge_units.push(l1_w.len());
        l1_w.push(above);
        l1_b.push(-b);
    }
    // protected passthrough
    let mut bit_unit = vec![usize::MAX; width];
    for &f in schema.protected_features() {
        for slot in schema.slots(f) {
            let mut row = vec![0.0; width];
            row[slot] = 1.0;
            bit_unit[slot] = l1_w.len();
            l1_w.push(row);
            l1_b.push(0.0);
        }
    }
    let h1 = l1_w.len();
    let p = schema.protected_features().len() as f64;
    let mut l2_w = Vec::new();
    let mut l2_b = Vec::new();
    for combo in schema.protected_combinations() {
        let mut row = vec![0.0; h1];
        for (&f, &value) in schema.protected_features().iter().zip(combo) {
            let crate::schema::FeatureValue::Cat(label) = value else {
                unreachable!("protected features checked categorical")
            };
            row[bit_unit[schema.slots(f).start + label]] = 1.0;
        }
        for &u in &hinge_units {
            row[u] = -1.0 / spec.ramp_width;
        }
        l2_w.push(row);
        l2_b.push(1.0 - p);
    }
    let base = logit(spec.base_score);
    let out_w: Vec<f64> = spec.core_scores().iter().map(|&s| logit(s) - base).collect();

    let mut rng = SeedStream::new(seed).rng(streams::PLANT);
    let mut perm1: Vec<usize> = (0..h1).collect();
    perm1.shuffle(&mut rng);
    let mut perm2: Vec<usize> = (0..l2_w.len()).collect();
    perm2.shuffle(&mut rng);
    let layer1 = DenseLayer::new(
        perm1.iter().map(|&i| l1_w[i].clone()).collect(),
        perm1.iter().map(|&i| l1_b[i]).collect(),
        Activation::Relu,
    )?;
    let layer2 = DenseLayer::new(
        perm2
            .iter()
            .map(|&c| perm1.iter().map(|&i| l2_w[c][i]).collect())
            .collect(),
        perm2.iter().map(|&c| l2_b[c]).collect(),
        Activation::Relu,
    )?;
    let out = DenseLayer::new(vec![perm2.iter().map(|&c| out_w[c]).collect()], vec![base], Activation::Identity)?;
    Network::new(width, vec![layer1, layer2, out], None)
}
