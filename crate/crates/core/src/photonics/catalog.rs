use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{transmittance, PhotonicsError, Result};

/// Deployment class of a fiber span; sets the default loss coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Environment {
    Intercity,
    Metro,
    Patch,
}

impl Environment {
    /// Average loss coefficient in dB/km measured by OTDR on the deployed spans.
    pub fn loss_coefficient_db_per_km(self) -> f64 {
        match self {
            Environment::Intercity => 0.21,
            Environment::Metro | Environment::Patch => 0.46,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberChannel {
    pub id: String,
    #[serde(default)]
    pub endpoint_a: String,
    #[serde(default)]
    pub endpoint_b: String,
    pub length_km: f64,
    pub loss_db: f64,
    pub environment: Environment,
}

impl FiberChannel {
    pub fn validate(&self) -> Result<()> {
        if self.loss_db > 0.0 || self.loss_db.is_nan() {
            return Err(PhotonicsError::PositiveLoss(self.loss_db));
        }
        if !(self.length_km >= 0.0) {
            return Err(PhotonicsError::Domain {
                what: "length_km",
                value: self.length_km,
            });
        }
        Ok(())
    }

    pub fn transmittance(&self) -> Result<f64> {
        transmittance(self.loss_db)
    }
}

/// Builds a channel whose loss follows from the environment's coefficient.
pub fn channel_from_length(
    id: impl Into<String>,
    length_km: f64,
    environment: Environment,
) -> Result<FiberChannel> {
    if !(length_km >= 0.0) {
        return Err(PhotonicsError::Domain {
            what: "length_km",
            value: length_km,
        });
    }
    let loss_db = if length_km == 0.0 {
        0.0
    } else {
        -environment.loss_coefficient_db_per_km() * length_km
    };
    Ok(FiberChannel {
        id: id.into(),
        endpoint_a: String::new(),
        endpoint_b: String::new(),
        length_km,
        loss_db,
        environment,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("duplicate fiber id '{id}' on line {line}")]
    Duplicate { id: String, line: u64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Installed fiber spans keyed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkCatalog {
    channels: BTreeMap<String, FiberChannel>,
}

impl LinkCatalog {
    /// Reads a table with columns `id,endpoint_a,endpoint_b,length_km,loss_db,environment`.
    pub fn from_csv<R: Read>(reader: R) -> std::result::Result<Self, CatalogError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut channels = BTreeMap::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let channel: FiberChannel =
                record
                    .deserialize(Some(&headers))
                    .map_err(|e| CatalogError::Row {
                        line,
                        message: e.to_string(),
                    })?;
            channel.validate().map_err(|e| CatalogError::Row {
                line,
                message: e.to_string(),
            })?;
            if channels.contains_key(&channel.id) {
                return Err(CatalogError::Duplicate {
                    id: channel.id,
                    line,
                });
            }
            channels.insert(channel.id.clone(), channel);
        }
        Ok(Self { channels })
    }

    pub fn from_channels(channels: impl IntoIterator<Item = FiberChannel>) -> Self {
        Self {
            channels: channels.into_iter().map(|c| (c.id.clone(), c)).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&FiberChannel> {
        self.channels.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &FiberChannel> {
        self.channels.values()
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_derived_losses() {
        let hc = channel_from_length("hc", 85.1, Environment::Intercity).unwrap();
        assert!((hc.loss_db - -17.871).abs() < 1e-9);
        assert!((hc.loss_db - -18.4).abs() < 0.6);
        let cw = channel_from_length("cw", 69.7, Environment::Intercity).unwrap();
        assert!((cw.loss_db - -14.637).abs() < 1e-9);
        let z = channel_from_length("z", 0.0, Environment::Metro).unwrap();
        assert_eq!(z.loss_db, 0.0);
        assert!(channel_from_length("n", -1.0, Environment::Metro).is_err());
    }

    #[test]
    fn catalog_parses_and_reports_lines() {
        let text = "id,endpoint_a,endpoint_b,length_km,loss_db,environment\n\
                    a,X,Y,1.0,-0.5,metro\n\
                    b,Y,Z,2.0,0.4,metro\n";
        let err = LinkCatalog::from_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 3"), "{err}");

        let text = "id,endpoint_a,endpoint_b,length_km,loss_db,environment\n\
                    a,X,Y,1.0,-0.5,metro\n\
                    b,Y,Z,abc,-0.4,metro\n";
        let err = LinkCatalog::from_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 3"), "{err}");

        let text = "id,endpoint_a,endpoint_b,length_km,loss_db,environment\n\
                    a,X,Y,1.0,-0.5,metro\n";
        let cat = LinkCatalog::from_csv(text.as_bytes()).unwrap();
        assert_eq!(cat.get("a").unwrap().environment, Environment::Metro);
    }
}
