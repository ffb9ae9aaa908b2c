//! One `--flag` per config key, generated from the key table.

use std::path::PathBuf;

use clap::{Arg, ArgMatches, Args, Command, FromArgMatches};

use hypernat_core::simnet::{FabricConfig, CONFIG_KEYS};

use crate::Failure;

const HEADING: &str = "Fabric config (override file and defaults)";

#[derive(Debug, Clone, Default)]
pub struct ConfigArgs {
    pub config: Option<PathBuf>,
    /// Explicitly given `(key, value)` pairs, in table order.
    pub overrides: Vec<(&'static str, String)>,
}

fn flag(key: &'static str) -> &'static str {
    Box::leak(key.replace('_', "-").into_boxed_str())
}

impl ConfigArgs {
    pub fn explicit_nics(&self) -> Option<&str> {
        self.overrides
            .iter()
            .find(|(k, _)| *k == "n_nics")
            .map(|(_, v)| v.as_str())
    }

    /// Defaults, then `--config`, then individual flags.
    pub fn resolve(&self) -> Result<FabricConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => FabricConfig::from_kv_file(path).map_err(Failure::invalid)?,
            None => FabricConfig::default(),
        };
        for (k, v) in &self.overrides {
            cfg.set(k, v).map_err(Failure::invalid)?;
        }
        cfg.validate().map_err(Failure::invalid)?;
        Ok(cfg)
    }
}

impl FromArgMatches for ConfigArgs {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut s = Self::default();
        s.update_from_arg_matches(m)?;
        Ok(s)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        if let Some(p) = m.get_one::<PathBuf>("config") {
            self.config = Some(p.clone());
        }
        for (key, _, _) in CONFIG_KEYS {
            if let Some(v) = m.get_one::<String>(key) {
                self.overrides.retain(|(k, _)| k != key);
                self.overrides.push((key, v.clone()));
            }
        }
        Ok(())
    }
}

impl Args for ConfigArgs {
    fn augment_args(cmd: Command) -> Command {
        let mut cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("key = value config file")
                .help_heading(HEADING),
        );
        for (key, default, help) in CONFIG_KEYS {
            let mut arg = Arg::new(*key)
                .long(flag(key))
                .value_name("VALUE")
                .help(format!("{help} [default: {default}]"))
                .help_heading(HEADING);
            arg = match *key {
                "n_nics" => arg.visible_alias("nics"),
                "install_mode" => arg.visible_alias("mode"),
                _ => arg,
            };
            cmd = cmd.arg(arg);
        }
        cmd
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}
