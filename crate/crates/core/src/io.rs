//! CSV readers and writers for annotations, splits and predictions.
//!
//! Annotation files carry the header
//! `image_id,person_id,gender,age,physique,height,body,arm,expression`.
//! Label cells hold label indices; the expression cell may hold several,
//! separated by `;`. An empty `person_id` marks an unidentified sample.
//! Prediction files use the same layout without the `person_id` column,
//! and split files are `image_id,subset`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::schema::{DatasetSplit, SampleAnnotation, Subset, Task};

pub const ANNOTATION_HEADER: [&str; 9] = [
    "image_id",
    "person_id",
    "gender",
    "age",
    "physique",
    "height",
    "body",
    "arm",
    "expression",
];

pub const PREDICTION_HEADER: [&str; 8] = [
    "image_id",
    "gender",
    "age",
    "physique",
    "height",
    "body",
    "arm",
    "expression",
];

pub const SPLIT_HEADER: [&str; 2] = ["image_id", "subset"];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: expected header `{expected}`, found `{found}`")]
    BadHeader {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}, line {line}: `{value}` is not a valid {column}")]
    BadField {
        path: PathBuf,
        line: u64,
        column: String,
        value: String,
    },
}

/// Predicted labels of one image, in the layout of [`SampleAnnotation::labels`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub image_id: String,
    pub labels: Vec<Vec<usize>>,
}

impl Prediction {
    pub fn label_set(&self, task: Task) -> &[usize] {
        self.labels.get(task.index()).map(Vec::as_slice).unwrap_or(&[])
    }
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<File, IoError> {
    File::create(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Table<R: Read> {
    path: PathBuf,
    reader: csv::Reader<R>,
}

impl<R: Read> Table<R> {
    fn new(path: &Path, source: R, header: &[&str]) -> Result<Self, IoError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let found = reader.headers().map_err(|source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        if found.iter().ne(header.iter().copied()) {
            return Err(IoError::BadHeader {
                path: path.to_path_buf(),
                expected: header.join(","),
                found: found.iter().collect::<Vec<_>>().join(","),
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            reader,
        })
    }

    fn for_each(mut self, mut f: impl FnMut(&Path, u64, &csv::StringRecord) -> Result<(), IoError>) -> Result<(), IoError> {
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(true) => {
                    let line = record.position().map(|p| p.line()).unwrap_or(0);
                    f(&self.path, line, &record)?;
                }
                Ok(false) => return Ok(()),
                Err(source) => {
                    return Err(IoError::Csv {
                        path: self.path.clone(),
                        source,
                    })
                }
            }
        }
    }
}

fn parse_label_cell(path: &Path, line: u64, column: &str, cell: &str) -> Result<Vec<usize>, IoError> {
    cell.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>().map_err(|_| IoError::BadField {
                path: path.to_path_buf(),
                line,
                column: format!("{column} label index"),
                value: s.to_string(),
            })
        })
        .collect()
}

fn parse_labels(path: &Path, line: u64, record: &csv::StringRecord, first: usize) -> Result<Vec<Vec<usize>>, IoError> {
    Task::ALL
        .iter()
        .enumerate()
        .map(|(i, task)| parse_label_cell(path, line, task.name(), &record[first + i]))
        .collect()
}

fn format_labels(labels: &[Vec<usize>]) -> Vec<String> {
    labels
        .iter()
        .map(|set| set.iter().map(usize::to_string).collect::<Vec<_>>().join(";"))
        .collect()
}

pub fn parse_annotations<R: Read>(path: &Path, source: R) -> Result<Vec<SampleAnnotation>, IoError> {
    let mut out = Vec::new();
    Table::new(path, source, &ANNOTATION_HEADER)?.for_each(|path, line, rec| {
        let person = rec[1].to_string();
        out.push(SampleAnnotation {
            image_id: rec[0].to_string(),
            person_id: (!person.is_empty()).then_some(person),
            labels: parse_labels(path, line, rec, 2)?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn read_annotations(path: &Path) -> Result<Vec<SampleAnnotation>, IoError> {
    parse_annotations(path, open(path)?)
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn finish<W: Write>(path: &Path, writer: csv::Writer<W>) -> Result<(), IoError> {
    let mut inner = writer.into_inner().map_err(|e| IoError::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })?;
    inner.flush().map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_annotations(path: &Path, records: &[SampleAnnotation]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(ANNOTATION_HEADER).map_err(csv_error(path))?;
    for rec in records {
        let mut row = vec![rec.image_id.clone(), rec.person_id.clone().unwrap_or_default()];
        row.extend(format_labels(&rec.labels));
        w.write_record(&row).map_err(csv_error(path))?;
    }
    finish(path, w)
}

pub fn parse_predictions<R: Read>(path: &Path, source: R) -> Result<Vec<Prediction>, IoError> {
    let mut out = Vec::new();
    Table::new(path, source, &PREDICTION_HEADER)?.for_each(|path, line, rec| {
        out.push(Prediction {
            image_id: rec[0].to_string(),
            labels: parse_labels(path, line, rec, 1)?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, IoError> {
    parse_predictions(path, open(path)?)
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(PREDICTION_HEADER).map_err(csv_error(path))?;
    for p in predictions {
        let mut row = vec![p.image_id.clone()];
        row.extend(format_labels(&p.labels));
        w.write_record(&row).map_err(csv_error(path))?;
    }
    finish(path, w)
}

/// Reads a split file. An image listed twice keeps its last subset.
pub fn parse_split<R: Read>(path: &Path, source: R) -> Result<DatasetSplit, IoError> {
    let mut split = DatasetSplit::default();
    Table::new(path, source, &SPLIT_HEADER)?.for_each(|path, line, rec| {
        let subset = Subset::parse(&rec[1]).ok_or_else(|| IoError::BadField {
            path: path.to_path_buf(),
            line,
            column: "subset".into(),
            value: rec[1].to_string(),
        })?;
        split.membership.insert(rec[0].to_string(), subset);
        Ok(())
    })?;
    Ok(split)
}

pub fn read_split(path: &Path) -> Result<DatasetSplit, IoError> {
    parse_split(path, open(path)?)
}

pub fn write_split(path: &Path, split: &DatasetSplit) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(SPLIT_HEADER).map_err(csv_error(path))?;
    for (id, subset) in &split.membership {
        w.write_record([id.as_str(), subset.as_str()]).map_err(csv_error(path))?;
    }
    finish(path, w)
}
