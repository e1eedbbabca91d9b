//! Two-component PCA projection for scatter plots.

use std::collections::HashSet;
use std::io::{self, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectedPoint {
    pub id: String,
    pub px: f64,
    pub py: f64,
    pub label: String,
    pub highlighted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Projection {
    pub points: Vec<ProjectedPoint>,
    /// Number of principal directions with non-negligible variance, capped
    /// at 2. Coordinates along missing directions are 0.
    pub rank: usize,
}

impl Projection {
    pub fn is_degenerate(&self) -> bool {
        self.rank < 2
    }

    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let res = (|| {
            wtr.write_record(["id", "px", "py", "label", "highlighted"])?;
            for p in &self.points {
                wtr.write_record([
                    p.id.as_str(),
                    &p.px.to_string(),
                    &p.py.to_string(),
                    &p.label,
                    if p.highlighted { "true" } else { "false" },
                ])?;
            }
            Ok::<_, csv::Error>(())
        })();
        res.map_err(io::Error::other)?;
        wtr.flush()
    }
}

/// Projects mean-centered embeddings onto their first two principal axes.
/// Each axis is oriented so its largest-magnitude loading is positive.
pub fn project_2d(ds: &LabeledDataset, highlight: &HashSet<String>) -> Result<Projection> {
    let emb = ds.embeddings();
    let (n, d) = (emb.n(), emb.d());
    if d < 2 {
        return Err(Error::ProjectionDimension(d));
    }
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, &x) in mean.iter_mut().zip(emb.row(i)) {
            *m += f64::from(x);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| f64::from(emb.row(i)[j]) - mean[j]);
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * 1e-10 + f64::MIN_POSITIVE;
    let mut axes = Vec::with_capacity(2);
    for &k in order.iter().take(2) {
        if eig.eigenvalues[k] <= tol {
            break;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = v.iter().enumerate().fold(
            0,
            |best, (j, x)| if x.abs() > v[best].abs() { j } else { best },
        );
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        axes.push(v);
    }

    let coord = |i: usize, axis: Option<&Vec<f64>>| {
        axis.map_or(0.0, |v| {
            centered.row(i).iter().zip(v).map(|(x, y)| x * y).sum()
        })
    };
    let points = (0..n)
        .map(|i| ProjectedPoint {
            id: ds.ids()[i].clone(),
            px: coord(i, axes.first()),
            py: coord(i, axes.get(1)),
            label: ds.label_name(i).to_owned(),
            highlighted: highlight.contains(&ds.ids()[i]),
        })
        .collect();
    Ok(Projection {
        points,
        rank: axes.len(),
    })
}
