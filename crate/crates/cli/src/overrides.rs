// SPDX-License-Identifier: Apache-2.0

//! Pulls `--section.key value` and `--section.key=value` out of argv before
//! clap sees it. A flag is an override exactly when its name contains a dot.

pub type Overrides = Vec<(String, String)>;

pub fn extract(argv: Vec<String>) -> Result<(Vec<String>, Overrides), String> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut out = Vec::new();
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--").filter(|f| f.contains('.')) else {
            rest.push(arg);
            continue;
        };
        match flag.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it.next().ok_or_else(|| format!("--{flag} needs a value"))?;
                out.push((flag.to_string(), v));
            }
        }
    }
    Ok((rest, out))
}
