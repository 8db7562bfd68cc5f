//! Dotted-key config overrides: `train.learning_rate=3e-4`,
//! `manifest.shortcuts.0.prevalence=0.85`, `sweep.prevalence=[1.0,0.95]`.

use crate::error::{Error, Result};

/// Accepted override key patterns; `#` matches a numeric list index.
pub fn valid_keys() -> Vec<&'static str> {
    vec![
        "name",
        "seed",
        "k_folds",
        "manifest_path",
        "teacher_arch",
        "student_arch",
        "methods",
        "pretrained_teacher_path",
        "output_dir",
        "manifest.seed",
        "manifest.image_side",
        "manifest.split_policy",
        "manifest.teacher_subset_fraction",
        "manifest.teacher_contamination",
        "manifest.n_per_class.train",
        "manifest.n_per_class.val",
        "manifest.n_per_class.test",
        "manifest.class_signal.background_level",
        "manifest.class_signal.background_noise",
        "manifest.class_signal.blob_contrast",
        "manifest.class_signal.contrast_gap",
        "manifest.class_signal.texture_sigma",
        "manifest.class_signal.texture_gap",
        "manifest.class_signal.severity_max_class0",
        "manifest.class_signal.severity_min_class1",
        "manifest.class_signal.radius_min_frac",
        "manifest.class_signal.radius_max_frac",
        "manifest.shortcuts.#.name",
        "manifest.shortcuts.#.kind",
        "manifest.shortcuts.#.amplitude",
        "manifest.shortcuts.#.square_side",
        "manifest.shortcuts.#.position",
        "manifest.shortcuts.#.target_class",
        "manifest.shortcuts.#.prevalence",
        "plan.alpha",
        "plan.lambda_ce",
        "plan.lambda_kd",
        "plan.include_final_head",
        "plan.n_sampled_layers",
        "plan.teacher_mode",
        "train.learning_rate",
        "train.weight_decay",
        "train.probe_lr",
        "train.max_epochs",
        "train.early_stop_patience",
        "train.batch_size",
        "train.seed",
        "train.probe_refresh_epochs",
        "train.probe_finetune_epochs",
        "sweep.prevalence",
        "sweep.teacher_fraction",
        "sweep.contamination",
        "sweep.n_layers",
    ]
}

fn key_matches(pattern: &str, key: &str) -> bool {
    let ps: Vec<&str> = pattern.split('.').collect();
    let ks: Vec<&str> = key.split('.').collect();
    ps.len() == ks.len()
        && ps
            .iter()
            .zip(&ks)
            .all(|(p, k)| *p == "#" && k.parse::<usize>().is_ok() || p == k)
}

fn parse_value(raw: &str) -> toml::Value {
    // try TOML value syntax first (covers numbers, bools, arrays, quoted
    // strings), fall back to a bare string
    let doc = format!("v = {raw}");
    if let Ok(table) = toml::from_str::<toml::Table>(&doc) {
        if let Some(v) = table.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

/// Apply `key=value` overrides to a TOML document. Unknown keys are
/// rejected with the list of valid keys.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for ov in overrides {
        let (key, raw) = ov.split_once('=').ok_or_else(|| {
            Error::invalid("override", format!("`{ov}` is not of the form key=value"))
        })?;
        let key = key.trim();
        if !valid_keys().iter().any(|p| key_matches(p, key)) {
            return Err(Error::UnknownKey {
                key: key.to_string(),
                valid: valid_keys().join(", "),
            });
        }
        let value = parse_value(raw.trim());
        set_path(doc, key, value)?;
    }
    Ok(())
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut segments = key.split('.').peekable();
    let mut cursor: &mut toml::Value = {
        let first = segments.next().expect("nonempty key");
        if segments.peek().is_none() {
            table.insert(first.to_string(), value);
            return Ok(());
        }
        table
            .entry(first.to_string())
            .or_insert(toml::Value::Table(toml::Table::new()))
    };
    while let Some(seg) = segments.next() {
        let last = segments.peek().is_none();
        if let Ok(idx) = seg.parse::<usize>() {
            let arr = cursor.as_array_mut().ok_or_else(|| {
                Error::invalid("override", format!("`{key}`: `{seg}` indexes a non-array"))
            })?;
            if idx >= arr.len() {
                return Err(Error::invalid(
                    "override",
                    format!("`{key}`: index {idx} beyond array of {}", arr.len()),
                ));
            }
            if last {
                arr[idx] = value;
                return Ok(());
            }
            cursor = &mut arr[idx];
        } else {
            let tbl = cursor.as_table_mut().ok_or_else(|| {
                Error::invalid("override", format!("`{key}`: `{seg}` indexes a non-table"))
            })?;
            if last {
                tbl.insert(seg.to_string(), value);
                return Ok(());
            }
            cursor = tbl
                .entry(seg.to_string())
                .or_insert(toml::Value::Table(toml::Table::new()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_doc() -> toml::Table {
        toml::from_str(
            r#"
            name = "t"
            seed = 1
            [train]
            learning_rate = 1e-4
            [manifest]
            image_side = 32
            [[manifest.shortcuts]]
            name = "sq"
            prevalence = 1.0
            "#,
        )
        .unwrap()
    }

    #[test]
    fn sets_nested_and_indexed_keys() {
        let mut doc = base_doc();
        apply_overrides(
            &mut doc,
            &[
                "train.learning_rate=3e-4".into(),
                "manifest.shortcuts.0.prevalence=0.85".into(),
                "seed=9".into(),
            ],
        )
        .unwrap();
        assert_eq!(doc["train"]["learning_rate"].as_float(), Some(3e-4));
        assert_eq!(
            doc["manifest"]["shortcuts"][0]["prevalence"].as_float(),
            Some(0.85)
        );
        assert_eq!(doc["seed"].as_integer(), Some(9));
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let mut doc = base_doc();
        let err = apply_overrides(&mut doc, &["train.momentum=0.9".into()]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("train.momentum"));
        assert!(msg.contains("train.learning_rate"));
    }

    #[test]
    fn parses_arrays_strings_and_bools() {
        let mut doc = base_doc();
        apply_overrides(
            &mut doc,
            &[
                "sweep.prevalence=[1.0, 0.95]".into(),
                "plan.include_final_head=false".into(),
                "student_arch=small_cnn_5".into(),
            ],
        )
        .unwrap();
        assert_eq!(doc["sweep"]["prevalence"].as_array().unwrap().len(), 2);
        assert_eq!(doc["plan"]["include_final_head"].as_bool(), Some(false));
        assert_eq!(doc["student_arch"].as_str(), Some("small_cnn_5"));
    }

    #[test]
    fn out_of_range_index_rejected() {
        let mut doc = base_doc();
        assert!(apply_overrides(&mut doc, &["manifest.shortcuts.3.prevalence=0.5".into()]).is_err());
    }
}
