//! Writes fitted constants into a scenario file, keeping its comments.

use anyhow::Context;
use toml_edit::{value, Array, DocumentMut, Item, Table};

use fpa_qkd::scenario::Calibration;

fn array(values: &[f64]) -> Item {
    let mut a = Array::new();
    for v in values {
        a.push(*v);
    }
    value(a)
}

pub fn set_calibration(text: &str, cal: &Calibration) -> anyhow::Result<String> {
    let mut doc: DocumentMut = text.parse().context("scenario is not valid TOML")?;
    if !doc.contains_key("calibration") {
        doc.insert("calibration", Item::Table(Table::new()));
    }
    let table = doc["calibration"].as_table_mut().context("`calibration` must be a table")?;
    table["system_efficiency"] = value(cal.system_efficiency);
    table["evaluation_acceptance"] = value(cal.evaluation_acceptance);
    table["intrinsic_error"] = value(cal.intrinsic_error);
    table["excess_loss_db"] = array(&cal.excess_loss_db);
    table["raman_coefficient"] = value(cal.raman_coefficient);
    table["solar_slope_hz_per_lux"] = array(&cal.solar_slope_hz_per_lux);
    Ok(doc.to_string())
}
