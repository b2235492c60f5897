//! Flat `key = value` configuration files.
//!
//! Every key has a default; a file only needs the keys it changes. Unknown
//! keys, repeated keys and unparsable values are errors that name the key.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;
use vagg_core::crypto::DigestAlgo;
use vagg_core::geo::RoadClass;
use vagg_core::packets::EventType;
use vagg_core::protocol::StoragePolicy;
use vagg_core::sim::{AdversarySpec, EventSpec, SimConfig, SimError};
use vagg_core::verify::VerificationPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`; known keys are: {known}")]
    UnknownKey { line: usize, key: String, known: String },
    #[error("line {line}: key `{key}` given more than once")]
    Duplicate { line: usize, key: String },
    #[error("invalid value `{value}` for `{key}` ({reason}); default is `{default}`")]
    InvalidValue {
        key: &'static str,
        value: String,
        reason: String,
        default: String,
    },
    #[error("inconsistent configuration: {0}")]
    Invalid(#[from] SimError),
}

/// Everything a file can set, before it is assembled into a `SimConfig`.
#[derive(Debug, Clone)]
struct Draft {
    sim: SimConfig,
    event: EventSpec,
    event_enabled: bool,
    k: u32,
    min_signatures: usize,
    storage_jam_ms: u64,
    storage_parking_ms: u64,
    factor_conventional: f64,
    factor_highway: f64,
}

impl Default for Draft {
    fn default() -> Self {
        let sim = SimConfig::default();
        let storage = &sim.protocol.storage;
        let verification = sim.protocol.verification;
        Draft {
            event: sim.event.unwrap_or_default(),
            event_enabled: sim.event.is_some(),
            k: verification.k(),
            min_signatures: verification.min_signatures(),
            storage_jam_ms: storage.basic_time_ms(EventType::TrafficJam).unwrap_or(0),
            storage_parking_ms: storage.basic_time_ms(EventType::FreeParking).unwrap_or(0),
            factor_conventional: storage.factor(RoadClass::Conventional),
            factor_highway: storage.factor(RoadClass::Highway),
            sim,
        }
    }
}

type Getter = fn(&Draft) -> String;
type Setter = fn(&mut Draft, &str) -> Result<(), String>;

struct Key {
    name: &'static str,
    help: &'static str,
    get: Getter,
    set: Setter,
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

fn boolean(v: &str) -> Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

fn road_class_name(r: RoadClass) -> &'static str {
    match r {
        RoadClass::Conventional => "conventional",
        RoadClass::Highway => "highway",
    }
}

const KEYS: &[Key] = &[
    Key {
        name: "node_count",
        help: "vehicles on the strip",
        get: |d| d.sim.node_count.to_string(),
        set: |d, v| Ok(d.sim.node_count = num(v)?),
    },
    Key {
        name: "area_m",
        help: "length of the road strip in meters",
        get: |d| d.sim.area_m.to_string(),
        set: |d, v| Ok(d.sim.area_m = num(v)?),
    },
    Key {
        name: "lanes_per_direction",
        help: "lanes in each direction",
        get: |d| d.sim.lanes_per_direction.to_string(),
        set: |d, v| Ok(d.sim.lanes_per_direction = num(v)?),
    },
    Key {
        name: "speed_limit_kmh",
        help: "speed limit; vehicles drive at 50 to 100 percent of it",
        get: |d| d.sim.speed_limit_kmh.to_string(),
        set: |d, v| Ok(d.sim.speed_limit_kmh = num(v)?),
    },
    Key {
        name: "road_class",
        help: "highway or conventional",
        get: |d| road_class_name(d.sim.road_class).to_string(),
        set: |d, v| {
            d.sim.road_class = match v.to_ascii_lowercase().as_str() {
                "highway" => RoadClass::Highway,
                "conventional" => RoadClass::Conventional,
                _ => return Err("expected highway or conventional".into()),
            };
            Ok(())
        },
    },
    Key {
        name: "duration_ms",
        help: "simulated time",
        get: |d| d.sim.duration_ms.to_string(),
        set: |d, v| Ok(d.sim.duration_ms = num(v)?),
    },
    Key {
        name: "retransmission_start_ms",
        help: "first periodic retransmission",
        get: |d| d.sim.retransmission_start_ms.to_string(),
        set: |d, v| Ok(d.sim.retransmission_start_ms = num(v)?),
    },
    Key {
        name: "retransmission_period_ms",
        help: "interval between retransmissions",
        get: |d| d.sim.retransmission_period_ms.to_string(),
        set: |d, v| Ok(d.sim.retransmission_period_ms = num(v)?),
    },
    Key {
        name: "tx_range_m",
        help: "radio range, at most 300",
        get: |d| d.sim.tx_range_m.to_string(),
        set: |d, v| Ok(d.sim.tx_range_m = num(v)?),
    },
    Key {
        name: "latency_ms",
        help: "delay of every transmission",
        get: |d| d.sim.latency_ms.to_string(),
        set: |d, v| Ok(d.sim.latency_ms = num(v)?),
    },
    Key {
        name: "loss_rate",
        help: "probability that a single reception is lost",
        get: |d| d.sim.loss_rate.to_string(),
        set: |d, v| Ok(d.sim.loss_rate = num(v)?),
    },
    Key {
        name: "encounter_period_ms",
        help: "mobility step and contact check interval",
        get: |d| d.sim.encounter_period_ms.to_string(),
        set: |d, v| Ok(d.sim.encounter_period_ms = num(v)?),
    },
    Key {
        name: "detection_delay_max_ms",
        help: "largest delay between seeing an event and reporting it",
        get: |d| d.sim.detection_delay_max_ms.to_string(),
        set: |d, v| Ok(d.sim.detection_delay_max_ms = num(v)?),
    },
    Key {
        name: "jam_slowdown",
        help: "speed factor inside a traffic jam",
        get: |d| d.sim.jam_slowdown.to_string(),
        set: |d, v| Ok(d.sim.jam_slowdown = num(v)?),
    },
    Key {
        name: "event_type",
        help: "jam, parking, accident, obstacle or none",
        get: |d| {
            if d.event_enabled {
                d.event.event_type.name().to_string()
            } else {
                "none".to_string()
            }
        },
        set: |d, v| {
            if v.eq_ignore_ascii_case("none") {
                d.event_enabled = false;
                return Ok(());
            }
            d.event.event_type = EventType::parse(v).ok_or("expected jam, parking, accident, obstacle or none")?;
            d.event_enabled = true;
            Ok(())
        },
    },
    Key {
        name: "event_x_m",
        help: "event position along the strip",
        get: |d| d.event.x_m.to_string(),
        set: |d, v| Ok(d.event.x_m = num(v)?),
    },
    Key {
        name: "event_direction",
        help: "affected direction, 0 or 1",
        get: |d| d.event.direction.to_string(),
        set: |d, v| Ok(d.event.direction = num(v)?),
    },
    Key {
        name: "event_lane",
        help: "lane the event sits in",
        get: |d| d.event.lane.to_string(),
        set: |d, v| Ok(d.event.lane = num(v)?),
    },
    Key {
        name: "event_start_ms",
        help: "when the event becomes visible",
        get: |d| d.event.start_ms.to_string(),
        set: |d, v| Ok(d.event.start_ms = num(v)?),
    },
    Key {
        name: "danger_radius_m",
        help: "danger zone radius",
        get: |d| d.sim.danger_radius_m.to_string(),
        set: |d, v| Ok(d.sim.danger_radius_m = num(v)?),
    },
    Key {
        name: "uncertainty_radius_m",
        help: "uncertainty zone radius",
        get: |d| d.sim.uncertainty_radius_m.to_string(),
        set: |d, v| Ok(d.sim.uncertainty_radius_m = num(v)?),
    },
    Key {
        name: "security_radius_m",
        help: "security zone radius",
        get: |d| d.sim.security_radius_m.to_string(),
        set: |d, v| Ok(d.sim.security_radius_m = num(v)?),
    },
    Key {
        name: "packet_size",
        help: "256, 512, 1024 or 1500 bytes",
        get: |d| d.sim.packet_size.to_string(),
        set: |d, v| Ok(d.sim.packet_size = num(v)?),
    },
    Key {
        name: "digest",
        help: "md5, sha1 or sha256",
        get: |d| d.sim.protocol.digest.name().to_ascii_lowercase().replace('-', ""),
        set: |d, v| {
            d.sim.protocol.digest = DigestAlgo::parse(v).ok_or("expected md5, sha1 or sha256")?;
            Ok(())
        },
    },
    Key {
        name: "max_signers",
        help: "signers per aggregate, or auto to derive it from packet_size and digest",
        get: |d| d.sim.max_signers.map_or("auto".to_string(), |n| n.to_string()),
        set: |d, v| {
            d.sim.max_signers = if v.eq_ignore_ascii_case("auto") { None } else { Some(num(v)?) };
            Ok(())
        },
    },
    Key {
        name: "k",
        help: "expected number of signatures checked per aggregate",
        get: |d| d.k.to_string(),
        set: |d, v| Ok(d.k = num(v)?),
    },
    Key {
        name: "min_signatures",
        help: "distinct signers needed to trust an aggregate",
        get: |d| d.min_signatures.to_string(),
        set: |d, v| Ok(d.min_signatures = num(v)?),
    },
    Key {
        name: "group_window_ms",
        help: "how long a leader collects signatures",
        get: |d| d.sim.protocol.group_window_ms.to_string(),
        set: |d, v| Ok(d.sim.protocol.group_window_ms = num(v)?),
    },
    Key {
        name: "agreement_window_ms",
        help: "largest gap between a report and one's own sighting",
        get: |d| d.sim.protocol.agreement_window_ms.to_string(),
        set: |d, v| Ok(d.sim.protocol.agreement_window_ms = num(v)?),
    },
    Key {
        name: "storage_jam_ms",
        help: "basic storage time of a traffic jam",
        get: |d| d.storage_jam_ms.to_string(),
        set: |d, v| Ok(d.storage_jam_ms = num(v)?),
    },
    Key {
        name: "storage_parking_ms",
        help: "basic storage time of a free parking spot",
        get: |d| d.storage_parking_ms.to_string(),
        set: |d, v| Ok(d.storage_parking_ms = num(v)?),
    },
    Key {
        name: "factor_conventional",
        help: "storage time multiplier on conventional roads",
        get: |d| d.factor_conventional.to_string(),
        set: |d, v| Ok(d.factor_conventional = num(v)?),
    },
    Key {
        name: "factor_highway",
        help: "storage time multiplier on highways",
        get: |d| d.factor_highway.to_string(),
        set: |d, v| Ok(d.factor_highway = num(v)?),
    },
    Key {
        name: "aggregation",
        help: "false runs the unaggregated baseline",
        get: |d| d.sim.aggregation_enabled.to_string(),
        set: |d, v| Ok(d.sim.aggregation_enabled = boolean(v)?),
    },
    Key {
        name: "adversaries",
        help: "comma-separated node:behavior entries, e.g. 3:false_info, 5:collusion(6;7)",
        get: |d| d.sim.adversaries.to_string(),
        set: |d, v| {
            d.sim.adversaries = AdversarySpec::parse(v).map_err(|e| e.to_string())?;
            Ok(())
        },
    },
    Key {
        name: "attack_time_ms",
        help: "when fabricating adversaries report their false event",
        get: |d| d.sim.attack_time_ms.to_string(),
        set: |d, v| Ok(d.sim.attack_time_ms = num(v)?),
    },
    Key {
        name: "seed",
        help: "base seed; --seed overrides it",
        get: |d| d.sim.seed.to_string(),
        set: |d, v| Ok(d.sim.seed = num(v)?),
    },
];

fn key(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

fn default_of(k: &Key) -> String {
    (k.get)(&Draft::default())
}

pub fn known_keys() -> Vec<&'static str> {
    KEYS.iter().map(|k| k.name).collect()
}

impl Draft {
    fn build(self) -> Result<SimConfig, ConfigError> {
        let invalid = |key: &'static str, value: String, reason: String| ConfigError::InvalidValue {
            key,
            value,
            reason,
            default: default_of(self::key(key).expect("known key")),
        };
        let verification = VerificationPolicy::new(self.k, self.min_signatures).map_err(|e| {
            let (key, value) = if self.k == 0 {
                ("k", self.k.to_string())
            } else {
                ("min_signatures", self.min_signatures.to_string())
            };
            invalid(key, value, e.to_string())
        })?;
        let storage = StoragePolicy::new(self.factor_conventional, self.factor_highway)
            .map_err(|e| {
                let (key, value) = if self.factor_conventional > 0.0 && self.factor_conventional.is_finite() {
                    ("factor_highway", self.factor_highway.to_string())
                } else {
                    ("factor_conventional", self.factor_conventional.to_string())
                };
                invalid(key, value, e.to_string())
            })?
            .with_basic_time(EventType::TrafficJam, self.storage_jam_ms)
            .with_basic_time(EventType::FreeParking, self.storage_parking_ms);
        let mut sim = self.sim;
        sim.protocol.verification = verification;
        sim.protocol.storage = storage;
        sim.event = self.event_enabled.then_some(self.event);
        sim.validate()?;
        Ok(sim)
    }
}

/// Parses configuration text; keys not mentioned keep their defaults.
pub fn parse_config(text: &str) -> Result<SimConfig, ConfigError> {
    let mut draft = Draft::default();
    let mut seen = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (name, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            text: content.to_string(),
        })?;
        let (name, value) = (name.trim(), value.trim());
        let k = key(name).ok_or_else(|| ConfigError::UnknownKey {
            line,
            key: name.to_string(),
            known: known_keys().join(", "),
        })?;
        if seen.contains(&k.name) {
            return Err(ConfigError::Duplicate {
                line,
                key: k.name.to_string(),
            });
        }
        seen.push(k.name);
        (k.set)(&mut draft, value).map_err(|reason| ConfigError::InvalidValue {
            key: k.name,
            value: value.to_string(),
            reason,
            default: default_of(k),
        })?;
    }
    draft.build()
}

pub fn load_config(path: &Path) -> Result<SimConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

/// A complete configuration file holding every key at its default.
pub fn render_defaults() -> String {
    let draft = Draft::default();
    let mut out = String::from("# vagg simulation settings. Every key is optional; omitted keys keep these values.\n\n");
    for k in KEYS {
        let _ = writeln!(out, "# {}", k.help);
        let _ = writeln!(out, "{} = {}", k.name, (k.get)(&draft));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), SimConfig::default());
        assert_eq!(parse_config("# only a comment\n\n").unwrap(), SimConfig::default());
    }

    #[test]
    fn rendered_defaults_round_trip() {
        assert_eq!(parse_config(&render_defaults()).unwrap(), SimConfig::default());
    }

    #[test]
    fn values_are_applied() {
        let c = parse_config(
            "node_count = 35  # more cars\nroad_class = conventional\ndigest = md5\nmax_signers = 9\n\
             adversaries = 2:modify_aggregate\nk = 6\nstorage_jam_ms = 1000\nevent_type = parking\n",
        )
        .unwrap();
        assert_eq!(c.node_count, 35);
        assert_eq!(c.road_class, RoadClass::Conventional);
        assert_eq!(c.protocol.digest, DigestAlgo::Md5);
        assert_eq!(c.max_signers, Some(9));
        assert_eq!(c.protocol.verification.k(), 6);
        assert_eq!(c.protocol.storage.basic_time_ms(EventType::TrafficJam), Some(1000));
        assert_eq!(c.event.unwrap().event_type, EventType::FreeParking);
        assert!(!c.adversaries.is_empty());
    }

    #[test]
    fn event_can_be_disabled() {
        assert_eq!(parse_config("event_type = none").unwrap().event, None);
    }

    #[test]
    fn errors_name_the_key() {
        match parse_config("nodes = 3").unwrap_err() {
            ConfigError::UnknownKey { line, key, known } => {
                assert_eq!((line, key.as_str()), (1, "nodes"));
                assert!(known.contains("node_count"));
            }
            e => panic!("{e}"),
        }
        match parse_config("\nloss_rate = lots").unwrap_err() {
            ConfigError::InvalidValue { key, default, .. } => {
                assert_eq!(key, "loss_rate");
                assert_eq!(default, "0");
            }
            e => panic!("{e}"),
        }
        match parse_config("k = 0").unwrap_err() {
            ConfigError::InvalidValue { key, default, .. } => assert_eq!((key, default.as_str()), ("k", "10")),
            e => panic!("{e}"),
        }
        assert!(matches!(parse_config("seed = 1\nseed = 2"), Err(ConfigError::Duplicate { line: 2, .. })));
        assert!(matches!(parse_config("just words"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_config("tx_range_m = 500"), Err(ConfigError::Invalid(_))));
    }
}
