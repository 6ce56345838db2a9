use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use hoca_core::cube::{BaseTable, BaseTableCube, Cube};
use hoca_core::store::{load_cellset, ChunkStore, RechunkedStore};
use hoca_core::ResultCube;

use crate::config::{Loaded, Source};
use crate::error::{CliError, CliResult};

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))
}

/// Loads `source` as a cube.
pub fn load(cfg: &Loaded, source: &Source) -> CliResult<Arc<dyn Cube>> {
    Ok(match source {
        Source::Csv { path, schema } => {
            schema.validate()?;
            let table = BaseTable::from_csv(open(&cfg.resolve(path))?, schema.clone())?;
            Arc::new(BaseTableCube::new(table))
        }
        Source::Results { path, format, dimensions } => {
            let rc = ResultCube::read(open(&cfg.resolve(path))?, *format, dimensions.clone())?;
            Arc::new(rc.to_cellset()?)
        }
        Source::Cellset { path } => Arc::new(load_cellset(&cfg.resolve(path))?),
        Source::Chunked { path } => Arc::new(ChunkStore::open(&cfg.resolve(path))?),
        Source::Rechunked { path } => Arc::new(RechunkedStore::open(&cfg.resolve(path))?),
    })
}
