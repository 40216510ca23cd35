//! Resolution of the synthetic-distribution flags into a [`SyntheticConfig`].

use std::fs::File;
use std::io::BufReader;

use massweight::synthetic::{regime_config, SyntheticConfig, DEFAULT_M, DEFAULT_SEED};

use crate::error::{CliError, Result};
use crate::SyntheticArgs;

/// Starts from the preset or config file, if any, then applies explicit flags.
/// Changing `a`, `b` or `N` of a preset drops its name.
pub fn resolve(args: &SyntheticArgs) -> Result<SyntheticConfig> {
    let mut cfg = if let Some(regime) = args.regime {
        regime_config(regime)
    } else if let Some(path) = &args.config {
        let file = File::open(path).map_err(|e| CliError::input(path.display(), e))?;
        let mut cfg: SyntheticConfig = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| CliError::input(path.display(), e))?;
        cfg.expected_sampled_mass = None;
        cfg
    } else {
        let (Some(a), Some(b), Some(n_draws)) = (args.a, args.b, args.n_draws) else {
            return Err(CliError::Input(
                "give --regime, --config, or all of -a, -b and -N".into(),
            ));
        };
        SyntheticConfig {
            a,
            b,
            n_draws,
            m: DEFAULT_M,
            seed: DEFAULT_SEED,
            regime: None,
            expected_sampled_mass: None,
        }
    };

    let before = (cfg.a, cfg.b, cfg.n_draws);
    if let Some(a) = args.a {
        cfg.a = a;
    }
    if let Some(b) = args.b {
        cfg.b = b;
    }
    if let Some(n) = args.n_draws {
        cfg.n_draws = n;
    }
    if (cfg.a, cfg.b, cfg.n_draws) != before {
        cfg.regime = None;
        cfg.expected_sampled_mass = None;
    }
    if let Some(m) = args.m {
        cfg.m = m;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}
