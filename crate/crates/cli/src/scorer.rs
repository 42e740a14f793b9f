use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use longpref::reward::{ConstantScorer, LinearBt, PlantedOracle, RemoteScorer, Scorer};

use crate::error::{CliError, Result};

/// Builds a scorer from a spec string:
///
/// * `bt:PATH` fitted linear BT parameters
/// * `remote:NAME=URL` HTTP scorer
/// * `table:PATH` JSON object mapping response text to score
/// * `constant:VALUE`
pub fn parse_scorer(spec: &str, timeout: Duration) -> Result<Box<dyn Scorer>> {
    let bad = || CliError::Config(format!("unrecognized scorer spec {spec:?} (bt:PATH, remote:NAME=URL, table:PATH, constant:V)"));
    let (kind, arg) = spec.split_once(':').ok_or_else(bad)?;
    Ok(match kind {
        "bt" => Box::new(LinearBt::load(arg)?),
        "remote" => {
            let (name, url) = arg.split_once('=').ok_or_else(bad)?;
            Box::new(RemoteScorer::new(name, url, timeout)?)
        }
        "table" => {
            let text = std::fs::read_to_string(arg).map_err(|e| CliError::io(Path::new(arg), e))?;
            let table: BTreeMap<String, f64> =
                serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{arg}: {e}")))?;
            let name = Path::new(arg).file_stem().map_or("table".into(), |s| s.to_string_lossy().into_owned());
            Box::new(PlantedOracle::from_table(name, table))
        }
        "constant" => Box::new(ConstantScorer(arg.parse().map_err(|_| bad())?)),
        _ => return Err(bad()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs() {
        let t = Duration::from_secs(1);
        assert_eq!(parse_scorer("constant:0.5", t).unwrap().score("p", "r").unwrap(), 0.5);
        assert!(parse_scorer("remote:x=http://127.0.0.1:9/score", t).is_ok());
        assert!(matches!(parse_scorer("bogus", t), Err(CliError::Config(_))));
        assert!(matches!(parse_scorer("remote:nourl", t), Err(CliError::Config(_))));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.json");
        std::fs::write(&path, r#"{"good": 2.0, "bad": 1.0}"#).unwrap();
        let s = parse_scorer(&format!("table:{}", path.display()), t).unwrap();
        assert_eq!(s.score("p", "good").unwrap(), 2.0);
        assert!(s.score("p", "other").is_err());
    }
}
