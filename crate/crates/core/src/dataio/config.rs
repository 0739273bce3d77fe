//! Config files: TOML with flat `key = value` pairs. Every key is optional
//! and defaults to [`SlamConfig::default`]; unknown keys are rejected.
//!
//! ```
//! let cfg = splatslam::dataio::parse_config("lambda = 0.5\nwindow_size = 4").unwrap();
//! assert_eq!(cfg.lambda, 0.5);
//! assert_eq!(cfg.window_size, 4);
//! ```

use super::{io_err, DataError};
use crate::depth_filter::FilterMode;
use crate::slam::SlamConfig;
use std::path::Path;
use toml::Value;

enum Slot {
    F(fn(&mut SlamConfig) -> &mut f64),
    U(fn(&mut SlamConfig) -> &mut usize),
    U64(fn(&mut SlamConfig) -> &mut u64),
    B(fn(&mut SlamConfig) -> &mut bool),
    Mode(fn(&mut SlamConfig) -> &mut FilterMode),
}

const KEYS: &[(&str, Slot)] = &[
    ("lambda", Slot::F(|c| &mut c.lambda)),
    ("window_size", Slot::U(|c| &mut c.window_size)),
    ("covisibility_threshold", Slot::F(|c| &mut c.covisibility_threshold)),
    ("baseline_ratio_threshold", Slot::F(|c| &mut c.baseline_ratio_threshold)),
    ("tracking_iters", Slot::U(|c| &mut c.tracking_iters)),
    ("mapping_iters", Slot::U(|c| &mut c.mapping_iters)),
    ("init_iters", Slot::U(|c| &mut c.init_iters)),
    ("divergence_factor", Slot::F(|c| &mut c.divergence_factor)),
    ("prune_every", Slot::U(|c| &mut c.prune_every)),
    ("random_past", Slot::U(|c| &mut c.random_past)),
    ("geo_alpha_min", Slot::F(|c| &mut c.geo_alpha_min)),
    ("rng_seed", Slot::U64(|c| &mut c.rng_seed)),
    ("filter_depth", Slot::B(|c| &mut c.filter_depth)),
    ("lr_decay", Slot::F(|c| &mut c.lr_decay)),
    ("mapping_pose_lr_scale", Slot::F(|c| &mut c.mapping_pose_lr_scale)),
    ("lr_mu_w", Slot::F(|c| &mut c.lr.mu_w)),
    ("lr_log_scale", Slot::F(|c| &mut c.lr.log_scale)),
    ("lr_rot_q", Slot::F(|c| &mut c.lr.rot_q)),
    ("lr_color", Slot::F(|c| &mut c.lr.color)),
    ("lr_logit_opacity", Slot::F(|c| &mut c.lr.logit_opacity)),
    ("lr_pose_rot", Slot::F(|c| &mut c.lr.pose_rot)),
    ("lr_pose_trans", Slot::F(|c| &mut c.lr.pose_trans)),
    ("z_min", Slot::F(|c| &mut c.render.z_min)),
    ("cov_floor", Slot::F(|c| &mut c.render.cov_floor)),
    ("alpha_max", Slot::F(|c| &mut c.render.alpha_max)),
    ("alpha_min", Slot::F(|c| &mut c.render.alpha_min)),
    ("t_stop", Slot::F(|c| &mut c.render.t_stop)),
    ("visibility_eps", Slot::F(|c| &mut c.render.visibility_eps)),
    ("tile_size", Slot::U(|c| &mut c.render.tile_size)),
    ("insert_stride", Slot::U(|c| &mut c.insert.stride)),
    ("insert_gradient_percentile", Slot::F(|c| &mut c.insert.gradient_percentile)),
    ("insert_gradient_boost", Slot::B(|c| &mut c.insert.gradient_boost)),
    ("prune_min_opacity", Slot::F(|c| &mut c.prune.min_opacity)),
    ("iqr_window", Slot::U(|c| &mut c.iqr.window)),
    ("iqr_k", Slot::F(|c| &mut c.iqr.k)),
    ("iqr_mode", Slot::Mode(|c| &mut c.iqr.mode)),
    ("iqr_min_samples", Slot::U(|c| &mut c.iqr.min_samples)),
];

/// Every accepted key, in documentation order.
pub fn config_keys() -> impl Iterator<Item = &'static str> {
    KEYS.iter().map(|(k, _)| *k)
}

pub fn parse_config(text: &str) -> Result<SlamConfig, DataError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| DataError::ConfigSyntax(e.to_string()))?;
    let mut cfg = SlamConfig::default();
    for (key, value) in &table {
        let Some((_, slot)) = KEYS.iter().find(|(k, _)| k == key) else {
            return Err(DataError::UnknownKey(key.clone()));
        };
        let type_err = |expected| DataError::TypeError { key: key.clone(), expected };
        match (slot, value) {
            (Slot::F(f), Value::Float(x)) => *f(&mut cfg) = *x,
            (Slot::F(f), Value::Integer(x)) => *f(&mut cfg) = *x as f64,
            (Slot::F(_), _) => return Err(type_err("a number")),
            (Slot::U(f), Value::Integer(x)) if *x >= 0 => *f(&mut cfg) = *x as usize,
            (Slot::U(_), _) => return Err(type_err("a non-negative integer")),
            (Slot::U64(f), Value::Integer(x)) if *x >= 0 => *f(&mut cfg) = *x as u64,
            (Slot::U64(_), _) => return Err(type_err("a non-negative integer")),
            (Slot::B(f), Value::Boolean(x)) => *f(&mut cfg) = *x,
            (Slot::B(_), _) => return Err(type_err("true or false")),
            (Slot::Mode(f), Value::String(s)) => *f(&mut cfg) = s.parse().map_err(|_| type_err("\"global\" or \"patch\""))?,
            (Slot::Mode(_), _) => return Err(type_err("\"global\" or \"patch\"")),
        }
    }
    cfg.validate().map_err(|(key, reason)| DataError::OutOfRange { key: key.into(), reason })?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<SlamConfig, DataError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text)
}
