use std::collections::BTreeMap;

use ravenforge::eval::{cohens_kappa, RegimeReport};
use ravenforge::pgm::Regime;
use ravenforge::wren::Variant;
use ravenforge::{Error, Result};

/// Stored kappa values must agree with the accuracy they came from.
const KAPPA_TOLERANCE: f64 = 1e-6;

fn check(r: &RegimeReport) -> Result<()> {
    if let (Some(acc), Some(k)) = (r.test_accuracy, r.test_kappa) {
        let fresh = cohens_kappa(acc)?;
        if (fresh - k).abs() > KAPPA_TOLERANCE {
            return Err(Error::Format(format!(
                "{} {} report stores kappa {k} for accuracy {acc}, expected {fresh}",
                r.regime, r.variant
            )));
        }
    }
    Ok(())
}

fn pct(v: Option<f64>) -> String {
    v.map_or("-".into(), |a| format!("{:.1}", 100.0 * a))
}

/// Markdown table with one row per regime in generalization order and
/// `Val %`, `Test %`, `Test κ` columns per model variant.
pub fn regime_table(reports: &[RegimeReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::param("report needs at least one regime report"));
    }
    let mut cells: BTreeMap<(u8, usize), &RegimeReport> = BTreeMap::new();
    for r in reports {
        check(r)?;
        let v = Variant::ALL.iter().position(|&v| v == r.variant).expect("known variant");
        if cells.insert((r.regime.code(), v), r).is_some() {
            return Err(Error::param(format!("duplicate report for {} / {}", r.regime, r.variant)));
        }
    }
    let variants: Vec<Variant> = Variant::ALL
        .into_iter()
        .enumerate()
        .filter(|(i, _)| cells.keys().any(|k| k.1 == *i))
        .map(|(_, v)| v)
        .collect();
    let mut out = String::from("| Regime |");
    for v in &variants {
        out += &format!(" {v} Val % | {v} Test % | {v} Test κ |");
    }
    out += "\n|---|";
    out += &"---|---|---|".repeat(variants.len());
    out += "\n";
    for regime in Regime::ALL {
        if !cells.keys().any(|k| k.0 == regime.code()) {
            continue;
        }
        out += &format!("| {} |", regime.label());
        for v in &variants {
            let vi = Variant::ALL.iter().position(|x| x == v).unwrap();
            match cells.get(&(regime.code(), vi)) {
                Some(r) => {
                    let kappa = r.test_accuracy.map(cohens_kappa).transpose()?;
                    out += &format!(
                        " {} | {} | {} |",
                        pct(r.val_accuracy),
                        pct(r.test_accuracy),
                        kappa.map_or("-".into(), |k| format!("{k:.3}"))
                    );
                }
                None => out += " - | - | - |",
            }
        }
        out += "\n";
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(regime: Regime, variant: Variant, test: f64) -> RegimeReport {
        RegimeReport {
            regime,
            variant,
            val_accuracy: Some(0.5),
            test_accuracy: Some(test),
            test_kappa: Some(cohens_kappa(test).unwrap()),
            n_val: 10,
            n_test: 10,
        }
    }

    #[test]
    fn single_report_gives_one_row() {
        let t = regime_table(&[report(Regime::Neutral, Variant::VaeFrozen, 0.626)]).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2], "| Neutral | 50.0 | 62.6 | 0.573 |");
    }

    #[test]
    fn rows_follow_generalization_order() {
        let rs = [
            report(Regime::HoTriples, Variant::CnnBaseline, 0.2),
            report(Regime::Neutral, Variant::VaeFrozen, 0.6),
            report(Regime::HoAttributePairs, Variant::VaeFrozen, 0.3),
            report(Regime::HoTriplePairs, Variant::CnnBaseline, 0.4),
        ];
        let t = regime_table(&rs).unwrap();
        let rows: Vec<&str> = t.lines().skip(2).map(|l| l.split('|').nth(1).unwrap().trim()).collect();
        assert_eq!(rows, ["Neutral", "H.O. Triple Pairs", "H.O. Attribute Pairs", "H.O. Triples"]);
        assert!(t.lines().next().unwrap().starts_with("| Regime | vae_frozen Val %"));
    }

    #[test]
    fn inconsistent_kappa_and_duplicates_are_rejected() {
        let mut bad = report(Regime::Neutral, Variant::VaeFrozen, 0.5);
        bad.test_kappa = Some(0.5);
        assert!(regime_table(&[bad]).is_err());
        let r = report(Regime::Neutral, Variant::VaeFrozen, 0.5);
        assert!(regime_table(&[r.clone(), r]).is_err());
        assert!(regime_table(&[]).is_err());
    }
}
