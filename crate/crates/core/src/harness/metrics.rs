//! End-point error, n-pixel error rates and the KITTI D1 outlier rate.

use std::fmt;

use crate::error::{Error, Result};
use crate::harness::pfm::plane_dims;
use crate::head::GroundTruth;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    /// Every valid ground-truth pixel.
    All,
    /// Valid pixels that are visible in both views.
    Noc,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::All => "all",
            Region::Noc => "noc",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub region: Region,
    pub pixels: usize,
    pub epe: f64,
    /// `err_rate[n - 1]`: fraction of pixels with error above `n` px.
    pub err_rate: [f64; 5],
    /// Fraction with error above 3 px and above 5% of the true disparity.
    pub d1: f64,
}

impl MetricsReport {
    pub fn key_values(&self) -> Vec<(String, String)> {
        let r = self.region;
        let mut out = vec![
            (format!("{r}.pixels"), self.pixels.to_string()),
            (format!("{r}.epe"), format!("{:.6}", self.epe)),
        ];
        for (n, rate) in self.err_rate.iter().enumerate() {
            out.push((format!("{r}.err{}", n + 1), format!("{rate:.6}")));
        }
        out.push((format!("{r}.d1"), format!("{:.6}", self.d1)));
        out
    }

    pub fn to_key_value_lines(&self) -> String {
        self.key_values().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

pub const TABLE_HEADER: &str = "sample\tregion\tpixels\tepe\terr1\terr2\terr3\terr4\terr5\td1";

/// Tab-separated rows under [`TABLE_HEADER`].
pub fn metrics_table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MetricsReport)>) -> String {
    let mut out = format!("{TABLE_HEADER}\n");
    for (name, m) in rows {
        out.push_str(&format!("{name}\t{}\t{}\t{:.6}", m.region, m.pixels, m.epe));
        for r in m.err_rate {
            out.push_str(&format!("\t{r:.6}"));
        }
        out.push_str(&format!("\t{:.6}\n", m.d1));
    }
    out
}

/// Reduces `pred` against `gt` over the region. `occlusion` is required for
/// [`Region::Noc`]; there is no fallback estimate.
pub fn evaluate<T: Real>(
    pred: &Tensor<T>,
    gt: &GroundTruth<T>,
    occlusion: Option<&[bool]>,
    region: Region,
) -> Result<MetricsReport> {
    let dims = plane_dims(pred)?;
    if dims != plane_dims(&gt.disparity)? {
        return Err(Error::shape(
            "evaluate",
            format!("prediction {:?} against ground truth {:?}", pred.shape(), gt.disparity.shape()),
        ));
    }
    let occ = match (region, occlusion) {
        (Region::All, _) => None,
        (Region::Noc, Some(o)) if o.len() == gt.valid.len() => Some(o),
        (Region::Noc, Some(_)) => return Err(Error::shape("evaluate", "occlusion mask size")),
        (Region::Noc, None) => return Err(Error::invalid("non-occluded metrics need an occlusion mask")),
    };
    let mut pixels = 0usize;
    let mut abs_sum = 0.0f64;
    let mut over = [0usize; 5];
    let mut outliers = 0usize;
    for (i, (&p, &g)) in pred.data().iter().zip(gt.disparity.data()).enumerate() {
        if !gt.valid[i] || occ.is_some_and(|o| o[i]) {
            continue;
        }
        let (p, g) = (p.to_f64(), g.to_f64());
        let e = (p - g).abs();
        pixels += 1;
        abs_sum += e;
        for (n, c) in over.iter_mut().enumerate() {
            if e > (n + 1) as f64 {
                *c += 1;
            }
        }
        if e > 3.0 && e > 0.05 * g.abs() {
            outliers += 1;
        }
    }
    if pixels == 0 {
        return Err(Error::invalid(format!("region {region} has no valid pixels")));
    }
    let n = pixels as f64;
    Ok(MetricsReport {
        region,
        pixels,
        epe: abs_sum / n,
        err_rate: over.map(|c| c as f64 / n),
        d1: outliers as f64 / n,
    })
}

/// Pixel-weighted mean of several reports of the same region.
pub fn aggregate_reports(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports.first().ok_or_else(|| Error::invalid("no reports to aggregate"))?;
    let total: usize = reports.iter().map(|r| r.pixels).sum();
    let weight = |f: &dyn Fn(&MetricsReport) -> f64| -> f64 {
        reports.iter().map(|r| f(r) * r.pixels as f64).sum::<f64>() / total as f64
    };
    let mut err_rate = [0.0; 5];
    for (n, e) in err_rate.iter_mut().enumerate() {
        *e = weight(&|r| r.err_rate[n]);
    }
    Ok(MetricsReport {
        region: first.region,
        pixels: total,
        epe: weight(&|r| r.epe),
        err_rate,
        d1: weight(&|r| r.d1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(values: Vec<f64>) -> GroundTruth<f64> {
        let n = values.len();
        GroundTruth::new(Tensor::from_vec(&[1, 1, 1, n], values).unwrap(), 1000).unwrap()
    }

    #[test]
    fn exact_prediction() {
        let g = gt(vec![1.0, 5.0, 9.0]);
        let m = evaluate(&g.disparity.clone(), &g, None, Region::All).unwrap();
        assert_eq!(m.epe, 0.0);
        assert_eq!(m.err_rate, [0.0; 5]);
        assert_eq!(m.d1, 0.0);
    }

    #[test]
    fn uniform_two_pixel_error() {
        let g = gt(vec![10.0, 20.0, 30.0, 40.0]);
        let pred = g.disparity.map(|d| d + 2.0);
        let m = evaluate(&pred, &g, None, Region::All).unwrap();
        assert_eq!(m.epe, 2.0);
        assert_eq!(m.err_rate[0], 1.0);
        assert_eq!(m.err_rate[2], 0.0);
    }

    #[test]
    fn d1_needs_both_conditions() {
        // 4 px error on gt 100 is above 3 px but under 5%.
        let g = gt(vec![100.0, 10.0]);
        let pred = Tensor::from_vec(&[1, 1, 1, 2], vec![104.0, 14.0]).unwrap();
        let m = evaluate(&pred, &g, None, Region::All).unwrap();
        assert_eq!(m.d1, 0.5);
    }

    #[test]
    fn noc_requires_mask_and_pixels() {
        let g = gt(vec![1.0, 2.0]);
        assert!(evaluate(&g.disparity.clone(), &g, None, Region::Noc).is_err());
        assert!(evaluate(&g.disparity.clone(), &g, Some(&[true, true]), Region::Noc).is_err());
        let m = evaluate(&g.disparity.clone(), &g, Some(&[true, false]), Region::Noc).unwrap();
        assert_eq!(m.pixels, 1);
    }

    #[test]
    fn table_has_one_row_per_report() {
        let g = gt(vec![1.0, 2.0]);
        let m = evaluate(&g.disparity.clone(), &g, None, Region::All).unwrap();
        let table = metrics_table([("a", &m), ("b", &m)]);
        assert_eq!(table.lines().count(), 3);
        assert!(m.to_key_value_lines().contains("all.epe=0.000000"));
    }
}
