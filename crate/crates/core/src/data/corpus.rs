//! Line-delimited JSON corpus: one sample per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::types::Sample;
use crate::error::{Error, Result};

pub struct CorpusWriter {
    path: PathBuf,
    out: BufWriter<File>,
    written: usize,
}

impl CorpusWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(CorpusWriter {
            path,
            out: BufWriter::new(file),
            written: 0,
        })
    }

    pub fn write(&mut self, sample: &Sample) -> Result<()> {
        serde_json::to_writer(&mut self.out, sample).map_err(|e| Error::io(&self.path, e.into()))?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> Result<usize> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.written)
    }
}

pub fn write_corpus(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let mut w = CorpusWriter::create(path)?;
    for s in samples {
        w.write(s)?;
    }
    w.finish().map(|_| ())
}

/// Streams samples to `f`; blank lines are skipped.
pub fn for_each_sample(path: impl AsRef<Path>, mut f: impl FnMut(Sample) -> Result<()>) -> Result<()> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let sample: Sample = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        sample.validate().map_err(|e| parse_err(e.to_string()))?;
        f(sample)?;
    }
    Ok(())
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for_each_sample(path, |s| {
        out.push(s);
        Ok(())
    })?;
    Ok(out)
}
