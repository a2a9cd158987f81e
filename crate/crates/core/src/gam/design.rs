use std::collections::HashMap;
use std::ops::Range;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};

use super::ModelSpec;
use crate::error::{Error, Result};
use crate::panel::Panel;
use crate::rt::RtSeries;
use crate::smooth::{build_term, SmoothSpec, SmoothTerm};

/// Model matrix with columns `[group indicators | smooth blocks]`.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Group (province) levels, one indicator column each.
    pub groups: Vec<String>,
    /// Level index of every row.
    pub row_group: Vec<usize>,
    pub terms: Vec<SmoothTerm>,
    /// Column span of each smooth term.
    pub blocks: Vec<Range<usize>>,
    /// Row keys when assembled from a panel.
    pub row_dates: Vec<NaiveDate>,
    /// Panel rows dropped for lacking a usable R_t.
    pub excluded: usize,
}

impl Design {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }
}

/// Builds the design from raw columns: response, group label per row, and
/// `(name, values, basis_dim)` per smooth.
pub fn assemble_from_columns(
    y: Vec<f64>,
    row_labels: &[String],
    smooths: &[(String, Vec<f64>, usize)],
) -> Result<Design> {
    let n = y.len();
    if n == 0 {
        return Err(Error::Empty("design has no rows"));
    }
    if row_labels.len() != n || smooths.iter().any(|(_, v, _)| v.len() != n) {
        return Err(Error::InvalidParameter(
            "design columns differ in length".into(),
        ));
    }
    if smooths.is_empty() {
        return Err(Error::InvalidParameter(
            "model needs at least one smooth".into(),
        ));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite response".into()));
    }
    let mut groups: Vec<String> = row_labels.to_vec();
    groups.sort();
    groups.dedup();
    let index: HashMap<&str, usize> = groups
        .iter()
        .enumerate()
        .map(|(i, g)| (g.as_str(), i))
        .collect();
    let row_group: Vec<usize> = row_labels.iter().map(|l| index[l.as_str()]).collect();

    let terms = smooths
        .iter()
        .map(|(name, values, k)| {
            let spec = SmoothSpec::from_data(name, values, *k)?;
            build_term(values, &spec)
        })
        .collect::<Result<Vec<_>>>()?;

    let g = groups.len();
    let p = g + terms.iter().map(|t| t.design.ncols()).sum::<usize>();
    let mut x = DMatrix::zeros(n, p);
    for (i, &gi) in row_group.iter().enumerate() {
        x[(i, gi)] = 1.0;
    }
    let mut blocks = Vec::with_capacity(terms.len());
    let mut col = g;
    for term in &terms {
        let width = term.design.ncols();
        x.view_mut((0, col), (n, width)).copy_from(&term.design);
        blocks.push(col..col + width);
        col += width;
    }
    Ok(Design {
        x,
        y: DVector::from_vec(y),
        groups,
        row_group,
        terms,
        blocks,
        row_dates: Vec::new(),
        excluded: 0,
    })
}

/// Joins panel rows with their R_t estimates; response is `ln R_t`.
/// Rows without a defined, non-provisional estimate are excluded and counted.
pub fn assemble_design(panel: &Panel, rt: &[RtSeries], spec: &ModelSpec) -> Result<Design> {
    spec.validate()?;
    let by_province: HashMap<&str, &RtSeries> =
        rt.iter().map(|s| (s.province.as_str(), s)).collect();
    let mut y = Vec::new();
    let mut labels = Vec::new();
    let mut dates = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); spec.smooths.len()];
    let mut excluded = 0;
    for province in panel.provinces() {
        let series = by_province.get(province.as_str()).ok_or_else(|| {
            Error::InsufficientData(format!("province {province} has no R_t series"))
        })?;
        for row in panel.province_rows(province) {
            let Some(value) = series.get(row.date).and_then(|d| d.usable()) else {
                excluded += 1;
                continue;
            };
            if !(value > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{province} {}: non-positive R_t {value}",
                    row.date
                )));
            }
            y.push(value.ln());
            labels.push(province.clone());
            dates.push(row.date);
            for (col, def) in columns.iter_mut().zip(&spec.smooths) {
                col.push(def.covariate.value(row));
            }
        }
    }
    if y.is_empty() {
        return Err(Error::InsufficientData("no rows with usable R_t".into()));
    }
    let smooths: Vec<(String, Vec<f64>, usize)> = spec
        .smooths
        .iter()
        .zip(columns)
        .map(|(def, values)| (def.covariate.name().to_string(), values, def.basis_dim))
        .collect();
    let mut design = assemble_from_columns(y, &labels, &smooths)?;
    design.row_dates = dates;
    design.excluded = excluded;
    Ok(design)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{ObservationRow, StudyWindow};
    use crate::rt::{DayFlags, RtDay};
    use chrono::Duration;

    fn panel_and_rt(provinces: &[&str], days: i64, rt: f64) -> (Panel, Vec<RtSeries>) {
        let start = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
        let mut rows = Vec::new();
        let mut series = Vec::new();
        for (p, name) in provinces.iter().enumerate() {
            let mut rt_days = Vec::new();
            for i in 0..days {
                let date = start + Duration::days(i);
                let f = i as f64 + 7.0 * p as f64;
                rows.push(ObservationRow {
                    date,
                    province: name.to_string(),
                    region: "R".into(),
                    new_cases: 10,
                    new_tests: 100,
                    temperature_c: 5.0 + (f * 0.37) % 25.0,
                    humidity_pct: 30.0 + (f * 3.1) % 60.0,
                    pm25: 10.0 + (f * 7.7) % 100.0,
                    mobility_decrease_pct: (f * 1.3) % 40.0,
                });
                rt_days.push(RtDay {
                    date,
                    rt: Some(rt),
                    adjusted_incidence: None,
                    flags: DayFlags::default(),
                });
            }
            series.push(RtSeries {
                province: name.to_string(),
                days: rt_days,
                config: None,
            });
        }
        (
            Panel::from_rows(rows, StudyWindow::default()).unwrap(),
            series,
        )
    }

    #[test]
    fn two_provinces_four_smooths_give_22_columns() {
        let (panel, rt) = panel_and_rt(&["A", "B"], 40, 1.2);
        let design = assemble_design(&panel, &rt, &ModelSpec::default()).unwrap();
        assert_eq!(design.x.ncols(), 22);
        assert_eq!(design.blocks[0], 2..7);
        assert_eq!(design.n(), 80);
    }

    #[test]
    fn unit_rt_gives_zero_response() {
        let (panel, rt) = panel_and_rt(&["A"], 30, 1.0);
        let design = assemble_design(&panel, &rt, &ModelSpec::default()).unwrap();
        assert!(design.y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn provisional_rows_excluded_and_counted() {
        let (panel, mut rt) = panel_and_rt(&["A"], 30, 1.0);
        rt[0].days[29].flags.provisional = true;
        rt[0].days[0].flags.undefined = true;
        rt[0].days[0].rt = None;
        let design = assemble_design(&panel, &rt, &ModelSpec::default()).unwrap();
        assert_eq!(design.n(), 28);
        assert_eq!(design.excluded, 2);
    }

    #[test]
    fn missing_province_series_is_error() {
        let (panel, rt) = panel_and_rt(&["A", "B"], 30, 1.0);
        assert!(assemble_design(&panel, &rt[..1], &ModelSpec::default()).is_err());
    }

    #[test]
    fn non_positive_rt_is_error() {
        let (panel, mut rt) = panel_and_rt(&["A"], 30, 1.0);
        rt[0].days[3].rt = Some(0.0);
        assert!(assemble_design(&panel, &rt, &ModelSpec::default()).is_err());
    }
}
