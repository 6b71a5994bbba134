//! Posterior draw persistence.
//!
//! Line-delimited JSON: the first line is a header object carrying the model
//! identifier, dataset dimensions, covariate schema with its hash, the base
//! measure, and the MCMC settings; each following line is one retained draw
//! (concentrations, then occupied clusters with counts and parameters).
//! Floats survive the round trip exactly, so estimation from a draw file is
//! bit-identical to estimation from the in-memory draws.

use crate::data::CovariateSchema;
use crate::model::{BaseMeasure, DrawCluster, MCMCConfig, ModelKind, PosteriorDraw};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

const FORMAT: &str = "resqrl-draws";
const VERSION: u32 = 1;

/// Hex SHA-256 of the canonical schema encoding `name:kind;...`.
pub fn schema_hash(schema: &CovariateSchema) -> String {
    let mut hasher = Sha256::new();
    for (name, kind) in schema.names().iter().zip(schema.kinds()) {
        hasher.update(name.as_bytes());
        hasher.update(b":");
        hasher.update(format!("{kind:?}").to_lowercase().as_bytes());
        hasher.update(b";");
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    model: ModelKind,
    n: usize,
    draw_count: usize,
    schema: CovariateSchema,
    schema_hash: String,
    /// Largest observed follow-up time, for default plotting grids.
    t_max: f64,
    base: BaseMeasure,
    mcmc: MCMCConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DrawRecord {
    alpha_theta: f64,
    alpha_omega: f64,
    clusters: Vec<DrawCluster>,
}

/// A deserialized draw file.
#[derive(Debug, Clone)]
pub struct DrawFile {
    pub model: ModelKind,
    pub schema: CovariateSchema,
    pub schema_hash: String,
    pub t_max: f64,
    pub mcmc: MCMCConfig,
    pub draws: Vec<PosteriorDraw>,
}

/// Write retained draws with their provenance header.
pub fn write_draws(
    path: &Path,
    model: ModelKind,
    schema: &CovariateSchema,
    t_max: f64,
    mcmc: &MCMCConfig,
    draws: &[PosteriorDraw],
) -> Result<()> {
    if draws.is_empty() {
        return Err(Error::InvalidParam("cannot write an empty draw file".into()));
    }
    let base = draws[0].base.as_ref().clone();
    let header = Header {
        format: FORMAT.to_string(),
        version: VERSION,
        model,
        n: draws[0].n,
        draw_count: draws.len(),
        schema: schema.clone(),
        schema_hash: schema_hash(schema),
        t_max,
        base,
        mcmc: mcmc.clone(),
    };
    let file = std::fs::File::create(path)?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer(&mut writer, &header).map_err(io_like)?;
    writer.write_all(b"\n")?;
    for draw in draws {
        let record = DrawRecord {
            alpha_theta: draw.alpha_theta,
            alpha_omega: draw.alpha_omega,
            clusters: draw.clusters.clone(),
        };
        serde_json::to_writer(&mut writer, &record).map_err(io_like)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a draw file, verifying the format marker, the embedded schema hash,
/// and per-draw count consistency.
pub fn read_draws(path: &Path) -> Result<DrawFile> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::SchemaMismatch("draw file is empty".into()))??;
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| Error::SchemaMismatch(format!("invalid draw-file header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::SchemaMismatch(format!(
            "unsupported draw file format {}/{}",
            header.format, header.version
        )));
    }
    let expected_hash = schema_hash(&header.schema);
    if header.schema_hash != expected_hash {
        return Err(Error::SchemaMismatch(format!(
            "schema hash {} does not match embedded schema ({expected_hash})",
            header.schema_hash
        )));
    }
    header.base.validate()?;
    let base = Arc::new(header.base.clone());
    let mut draws = Vec::with_capacity(header.draw_count);
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DrawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            row: idx + 2,
            message: format!("invalid draw record: {e}"),
        })?;
        let draw = PosteriorDraw {
            clusters: record.clusters,
            alpha_theta: record.alpha_theta,
            alpha_omega: record.alpha_omega,
            n: header.n,
            base: Arc::clone(&base),
        };
        if !draw.counts_consistent() {
            return Err(Error::Parse {
                row: idx + 2,
                message: "draw cluster counts are inconsistent".into(),
            });
        }
        draws.push(draw);
    }
    if draws.len() != header.draw_count {
        return Err(Error::SchemaMismatch(format!(
            "draw file announces {} draws but contains {}",
            header.draw_count,
            draws.len()
        )));
    }
    Ok(DrawFile {
        model: header.model,
        schema: header.schema,
        schema_hash: header.schema_hash,
        t_max: header.t_max,
        mcmc: header.mcmc,
        draws,
    })
}

fn io_like(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::Other, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CovariateKind;
    use crate::model::{MCMCConfig, OutcomeClusterParams, SubclusterParams};
    use crate::model::DrawSubcluster;

    fn sample_draws() -> (CovariateSchema, Vec<PosteriorDraw>) {
        let schema = CovariateSchema::new(
            vec!["b".into(), "c".into()],
            vec![CovariateKind::Binary, CovariateKind::Continuous],
        )
        .unwrap();
        let dim = 4;
        let mut b = vec![0.0; dim * dim];
        for a in 0..dim {
            b[a * dim + a] = 1.0;
        }
        let base = Arc::new(BaseMeasure::with_prior(vec![0.1, -0.2, 0.3, 0.4], b, 2.0, 1, 1));
        let draw = PosteriorDraw {
            clusters: vec![DrawCluster {
                n: 7,
                params: OutcomeClusterParams {
                    beta: vec![0.123456789012345, -0.5, 0.25, 1.0 / 3.0],
                    sigma2: 0.7654321,
                },
                subclusters: vec![
                    DrawSubcluster {
                        n: 4,
                        params: SubclusterParams {
                            omega_z: 0.4,
                            pi: vec![0.9],
                            mu: vec![-0.3],
                            tau2: vec![1.5],
                        },
                    },
                    DrawSubcluster {
                        n: 3,
                        params: SubclusterParams {
                            omega_z: 0.6,
                            pi: vec![0.2],
                            mu: vec![0.8],
                            tau2: vec![0.5],
                        },
                    },
                ],
            }],
            alpha_theta: 1.25,
            alpha_omega: 0.75,
            n: 7,
            base,
        };
        (schema, vec![draw.clone(), draw])
    }

    #[test]
    fn draws_round_trip_exactly() {
        let (schema, draws) = sample_draws();
        let file = tempfile::NamedTempFile::new().unwrap();
        let cfg = MCMCConfig::default();
        write_draws(file.path(), ModelKind::Edpmm, &schema, 12.5, &cfg, &draws).unwrap();
        let back = read_draws(file.path()).unwrap();
        assert_eq!(back.model, ModelKind::Edpmm);
        assert_eq!(back.schema, schema);
        assert_eq!(back.t_max, 12.5);
        assert_eq!(back.draws.len(), 2);
        for (a, b) in draws.iter().zip(&back.draws) {
            assert_eq!(a.clusters, b.clusters);
            assert_eq!(a.alpha_theta.to_bits(), b.alpha_theta.to_bits());
            assert_eq!(a.alpha_omega.to_bits(), b.alpha_omega.to_bits());
            assert_eq!(a.base.a_beta, b.base.a_beta);
        }
    }

    #[test]
    fn tampered_schema_hash_is_rejected() {
        let (schema, draws) = sample_draws();
        let file = tempfile::NamedTempFile::new().unwrap();
        write_draws(
            file.path(),
            ModelKind::Dpmm,
            &schema,
            1.0,
            &MCMCConfig::default(),
            &draws,
        )
        .unwrap();
        let contents = std::fs::read_to_string(file.path()).unwrap();
        let tampered = contents.replacen("\"b\"", "\"bb\"", 1);
        std::fs::write(file.path(), tampered).unwrap();
        assert!(matches!(read_draws(file.path()), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn truncated_draw_file_is_rejected() {
        let (schema, draws) = sample_draws();
        let file = tempfile::NamedTempFile::new().unwrap();
        write_draws(
            file.path(),
            ModelKind::Edpmm,
            &schema,
            1.0,
            &MCMCConfig::default(),
            &draws,
        )
        .unwrap();
        let contents = std::fs::read_to_string(file.path()).unwrap();
        let mut lines: Vec<&str> = contents.lines().collect();
        lines.pop();
        std::fs::write(file.path(), lines.join("\n")).unwrap();
        assert!(read_draws(file.path()).is_err());
    }

    #[test]
    fn schema_hash_is_stable_and_discriminating() {
        let (schema, _) = sample_draws();
        let h1 = schema_hash(&schema);
        let h2 = schema_hash(&schema);
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);
        let other = CovariateSchema::new(
            vec!["b".into(), "d".into()],
            vec![CovariateKind::Binary, CovariateKind::Continuous],
        )
        .unwrap();
        assert_ne!(h1, schema_hash(&other));
    }
}
