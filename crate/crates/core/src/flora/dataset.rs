//! Labelled feature matrices and their CSV form.

use std::net::Ipv4Addr;

use super::features::{fmt_num, FeatureVector, DATASET_CSV_HEADER, FEATURE_COUNT, FEATURE_NAMES};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unexpected dataset header")]
    Header,
    #[error("row {row}: bad `{column}`")]
    Field { row: usize, column: &'static str },
    #[error("row {0} is unlabelled")]
    Unlabelled(usize),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u8>,
    pub ids: Vec<String>,
    pub src_ips: Vec<Ipv4Addr>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>) -> Self {
        Self {
            feature_names,
            ..Default::default()
        }
    }

    pub fn from_vectors(vs: &[FeatureVector]) -> Result<Self, DatasetError> {
        let mut d = Self::new(FEATURE_NAMES.iter().map(|s| s.to_string()).collect());
        for (i, v) in vs.iter().enumerate() {
            let label = v.label.ok_or(DatasetError::Unlabelled(i))?;
            d.x.push(v.predictors().to_vec());
            d.y.push(label);
            d.ids.push(v.flow_id.clone());
            d.src_ips.push(v.src_ip);
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// (normal, attack) row counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let attack = self.y.iter().filter(|l| **l == 1).count();
        (self.len() - attack, attack)
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            feature_names: self.feature_names.clone(),
            x: rows.iter().map(|&r| self.x[r].clone()).collect(),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            ids: rows
                .iter()
                .filter_map(|&r| self.ids.get(r).cloned())
                .collect(),
            src_ips: rows
                .iter()
                .filter_map(|&r| self.src_ips.get(r).copied())
                .collect(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            feature_names: cols
                .iter()
                .map(|&c| self.feature_names[c].clone())
                .collect(),
            x: self
                .x
                .iter()
                .map(|row| cols.iter().map(|&c| row[c]).collect())
                .collect(),
            y: self.y.clone(),
            ids: self.ids.clone(),
            src_ips: self.src_ips.clone(),
        }
    }

    /// Appends a column.
    pub fn push_column(&mut self, name: &str, values: &[f64]) {
        assert_eq!(values.len(), self.len());
        self.feature_names.push(name.to_string());
        for (row, v) in self.x.iter_mut().zip(values) {
            row.push(*v);
        }
    }

    pub fn append(&mut self, other: &Dataset) {
        assert_eq!(self.feature_names, other.feature_names);
        self.x.extend(other.x.iter().cloned());
        self.y.extend(&other.y);
        self.ids.extend(other.ids.iter().cloned());
        self.src_ips.extend(&other.src_ips);
    }

    /// Writes the 12-feature schema. Only valid for datasets with the
    /// standard feature columns in their standard order.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), DatasetError> {
        if self.feature_names != FEATURE_NAMES {
            return Err(DatasetError::Header);
        }
        let mut w = csv::Writer::from_writer(w);
        w.write_record(DATASET_CSV_HEADER)?;
        for i in 0..self.len() {
            let mut rec = vec![self.ids[i].clone(), self.src_ips[i].to_string()];
            let row = &self.x[i];
            rec.extend(row[..FEATURE_COUNT - 1].iter().map(|v| fmt_num(*v)));
            rec.push(fmt_num(row[FEATURE_COUNT - 1]));
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self, DatasetError> {
        let mut rdr = csv::Reader::from_reader(r);
        if rdr.headers()?.iter().collect::<Vec<_>>() != DATASET_CSV_HEADER {
            return Err(DatasetError::Header);
        }
        let mut d = Self::new(FEATURE_NAMES.iter().map(|s| s.to_string()).collect());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            d.ids.push(rec[0].to_string());
            d.src_ips
                .push(rec[1].parse().map_err(|_| DatasetError::Field {
                    row: i,
                    column: "src_ip",
                })?);
            let mut row = Vec::with_capacity(FEATURE_COUNT);
            for c in 0..FEATURE_COUNT {
                row.push(rec[c + 2].parse().map_err(|_| DatasetError::Field {
                    row: i,
                    column: DATASET_CSV_HEADER[c + 2],
                })?);
            }
            d.x.push(row);
            d.y.push(match &rec[FEATURE_COUNT + 2] {
                "0" => 0,
                "1" => 1,
                _ => {
                    return Err(DatasetError::Field {
                        row: i,
                        column: "label",
                    })
                }
            });
        }
        Ok(d)
    }
}
