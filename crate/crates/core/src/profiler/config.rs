use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ProfileError;
use crate::codec::OpKind;
use crate::sim::FilterSpec;
use crate::transport::BufferConfig;

pub const ENV_ENABLE: &str = "NMO_ENABLE";
pub const ENV_NAME: &str = "NMO_NAME";
pub const ENV_MODE: &str = "NMO_MODE";
pub const ENV_PERIOD: &str = "NMO_PERIOD";
pub const ENV_TRACK_RSS: &str = "NMO_TRACK_RSS";
pub const ENV_BUFSIZE: &str = "NMO_BUFSIZE";
pub const ENV_AUXBUFSIZE: &str = "NMO_AUXBUFSIZE";

/// PMU type number of the statistical profiling unit.
pub const SPE_PMU_TYPE: u32 = 0x2c;
/// Timestamp enable.
pub const SPE_TS_ENABLE: u64 = 1;
pub const SPE_LOAD_FILTER: u64 = 2 << 32;
pub const SPE_STORE_FILTER: u64 = 4 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    #[default]
    None,
    Load,
    Store,
    LoadStore,
}

impl SamplingMode {
    pub fn op_kinds(self) -> &'static [OpKind] {
        match self {
            SamplingMode::None => &[],
            SamplingMode::Load => &[OpKind::Load],
            SamplingMode::Store => &[OpKind::Store],
            SamplingMode::LoadStore => &[OpKind::Load, OpKind::Store],
        }
    }

    pub fn filter(self) -> FilterSpec {
        FilterSpec::kinds(self.op_kinds())
    }
}

impl FromStr for SamplingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(SamplingMode::None),
            "load" => Ok(SamplingMode::Load),
            "store" => Ok(SamplingMode::Store),
            "loadstore" => Ok(SamplingMode::LoadStore),
            _ => Err("expected one of none, load, store, loadstore".into()),
        }
    }
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMode::None => "none",
            SamplingMode::Load => "load",
            SamplingMode::Store => "store",
            SamplingMode::LoadStore => "loadstore",
        })
    }
}

/// Session settings, one field per `NMO_*` environment variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub enable: bool,
    pub name: String,
    pub mode: SamplingMode,
    pub period: u64,
    pub track_rss: bool,
    pub ring_bufsize_mib: u64,
    pub aux_bufsize_mib: u64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            enable: false,
            name: "nmo".into(),
            mode: SamplingMode::None,
            period: 0,
            track_rss: false,
            ring_bufsize_mib: 1,
            aux_bufsize_mib: 1,
        }
    }
}

impl ProfileConfig {
    /// Whether samples are collected at all. A zero period means the
    /// period was never set.
    pub fn sampling_enabled(&self) -> bool {
        self.enable && self.mode != SamplingMode::None && self.period > 0
    }

    /// Buffer geometry for the given page size; sizes round down to whole
    /// pages, with at least one page each.
    pub fn buffer_config(&self, page_size_bytes: u64) -> BufferConfig {
        let pages = |mib: u64| ((mib << 20) / page_size_bytes).max(1);
        BufferConfig {
            page_size_bytes,
            ring_pages: pages(self.ring_bufsize_mib),
            aux_pages: pages(self.aux_bufsize_mib),
            aux_watermark_bytes: None,
        }
    }
}

fn parse_bool(var: &'static str, value: &str) -> Result<bool, ProfileError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "on" | "true" | "yes" => Ok(true),
        "0" | "off" | "false" | "no" | "" => Ok(false),
        _ => Err(ProfileError::config(var, value, "expected on/off")),
    }
}

fn parse_u64(var: &'static str, value: &str) -> Result<u64, ProfileError> {
    let v = value.trim();
    if v.is_empty() || !v.bytes().all(|b| b.is_ascii_digit()) {
        return Err(ProfileError::config(
            var,
            value,
            "expected a decimal integer",
        ));
    }
    v.parse()
        .map_err(|_| ProfileError::config(var, value, "integer out of range"))
}

fn parse_mib(var: &'static str, value: &str) -> Result<u64, ProfileError> {
    match parse_u64(var, value)? {
        0 => Err(ProfileError::config(
            var,
            value,
            "buffer size must be at least 1 MiB",
        )),
        n if n > 1 << 20 => Err(ProfileError::config(var, value, "buffer size too large")),
        n => Ok(n),
    }
}

/// Builds a configuration from `NMO_*` variables; unknown variables are
/// ignored and unset ones keep their defaults.
pub fn parse_config<I, K, V>(env: I) -> Result<ProfileConfig, ProfileError>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut cfg = ProfileConfig::default();
    for (k, v) in env {
        let v = v.as_ref();
        match k.as_ref() {
            ENV_ENABLE => cfg.enable = parse_bool(ENV_ENABLE, v)?,
            ENV_NAME => {
                if v.is_empty() || v.contains(['/', '\\']) {
                    return Err(ProfileError::config(
                        ENV_NAME,
                        v,
                        "expected a non-empty file base name",
                    ));
                }
                cfg.name = v.to_owned();
            }
            ENV_MODE => {
                cfg.mode = v
                    .trim()
                    .parse()
                    .map_err(|e: String| ProfileError::config(ENV_MODE, v, &e))?
            }
            ENV_PERIOD => cfg.period = parse_u64(ENV_PERIOD, v)?,
            ENV_TRACK_RSS => cfg.track_rss = parse_bool(ENV_TRACK_RSS, v)?,
            ENV_BUFSIZE => cfg.ring_bufsize_mib = parse_mib(ENV_BUFSIZE, v)?,
            ENV_AUXBUFSIZE => cfg.aux_bufsize_mib = parse_mib(ENV_AUXBUFSIZE, v)?,
            _ => {}
        }
    }
    Ok(cfg)
}

/// `perf_event_attr` fields for the sampling unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttrSpec {
    pub pmu_type: u32,
    pub config_bits: u64,
    pub sample_period: u64,
}

pub fn encode_perf_attr(config: &ProfileConfig) -> Result<AttrSpec, ProfileError> {
    let filters = match config.mode {
        SamplingMode::None => return Err(ProfileError::SamplingDisabled("mode is none".into())),
        SamplingMode::Load => SPE_LOAD_FILTER,
        SamplingMode::Store => SPE_STORE_FILTER,
        SamplingMode::LoadStore => SPE_LOAD_FILTER | SPE_STORE_FILTER,
    };
    if config.period == 0 {
        return Err(ProfileError::SamplingDisabled(
            "sampling period is 0".into(),
        ));
    }
    Ok(AttrSpec {
        pmu_type: SPE_PMU_TYPE,
        config_bits: SPE_TS_ENABLE | filters,
        sample_period: config.period,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;

    fn env(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn empty_env_gives_defaults() {
        let cfg = parse_config(env(&[])).unwrap();
        assert_eq!(cfg, ProfileConfig::default());
        assert!(!cfg.enable);
        assert_eq!(cfg.name, "nmo");
        assert_eq!(cfg.mode, SamplingMode::None);
        assert_eq!(cfg.period, 0);
        assert!(!cfg.track_rss);
        assert_eq!((cfg.ring_bufsize_mib, cfg.aux_bufsize_mib), (1, 1));
        assert!(!cfg.sampling_enabled());
    }

    #[test]
    fn parses_values() {
        let cfg = parse_config(env(&[
            ("NMO_PERIOD", "3000"),
            ("NMO_MODE", "LoadStore"),
            ("NMO_ENABLE", "on"),
            ("NMO_TRACK_RSS", "1"),
            ("NMO_NAME", "stream"),
            ("NMO_AUXBUFSIZE", "4"),
            ("HOME", "/root"),
        ]))
        .unwrap();
        assert_eq!(cfg.period, 3000);
        assert_eq!(cfg.mode, SamplingMode::LoadStore);
        assert!(cfg.enable && cfg.track_rss && cfg.sampling_enabled());
        assert_eq!(cfg.name, "stream");
        assert_eq!(cfg.aux_bufsize_mib, 4);
        assert_eq!(cfg.buffer_config(65536).aux_pages, 64);
    }

    #[test]
    fn errors_name_the_variable() {
        let err = parse_config(env(&[("NMO_PERIOD", "abc")])).unwrap_err();
        assert!(err.to_string().contains("NMO_PERIOD"), "{err}");
        let err = parse_config(env(&[("NMO_PERIOD", "-5")])).unwrap_err();
        assert!(err.to_string().contains("NMO_PERIOD"));
        let err = parse_config(env(&[("NMO_MODE", "branch")])).unwrap_err();
        assert!(err.to_string().contains("NMO_MODE"));
        let err = parse_config(env(&[("NMO_BUFSIZE", "0")])).unwrap_err();
        assert!(err.to_string().contains("NMO_BUFSIZE"));
        let err = parse_config(env(&[("NMO_ENABLE", "maybe")])).unwrap_err();
        assert!(err.to_string().contains("NMO_ENABLE"));
        assert!(parse_config(env(&[("NMO_NAME", "")])).is_err());
    }

    #[test]
    fn attr_encoding() {
        let mut cfg = ProfileConfig {
            period: 4000,
            mode: SamplingMode::LoadStore,
            ..Default::default()
        };
        let attr = encode_perf_attr(&cfg).unwrap();
        assert_eq!(attr.pmu_type, 0x2c);
        assert_eq!(attr.config_bits, 0x600000001);
        assert_eq!(attr.sample_period, 4000);

        cfg.mode = SamplingMode::Load;
        let bits = encode_perf_attr(&cfg).unwrap().config_bits >> 32;
        assert_eq!(bits & 2, 2);
        assert_eq!(bits & 4, 0);

        cfg.mode = SamplingMode::Store;
        let bits = encode_perf_attr(&cfg).unwrap().config_bits >> 32;
        assert_eq!(bits & 4, 4);
        assert_eq!(bits & 2, 0);

        cfg.mode = SamplingMode::None;
        assert!(matches!(
            encode_perf_attr(&cfg),
            Err(ProfileError::SamplingDisabled(_))
        ));
        cfg.mode = SamplingMode::Load;
        cfg.period = 0;
        assert!(matches!(
            encode_perf_attr(&cfg),
            Err(ProfileError::SamplingDisabled(_))
        ));
    }
}
