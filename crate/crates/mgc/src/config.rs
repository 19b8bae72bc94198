//! Connection settings. Flags win over `MGC_API_URL` / `MGC_API_KEY`,
//! which win over the `key = value` lines of `~/.mgc.conf`.

use std::collections::HashMap;

pub const DEFAULT_API_URL: &str = "http://127.0.0.1:8080";
pub const ENV_API_URL: &str = "MGC_API_URL";
pub const ENV_API_KEY: &str = "MGC_API_KEY";
pub const CONFIG_FILE: &str = ".mgc.conf";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partial {
    pub api_url: Option<String>,
    pub api_key: Option<String>,
    pub project: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    pub api_url: String,
    pub api_key: Option<String>,
    pub project: Option<String>,
}

pub fn parse_file(text: &str) -> Partial {
    let mut out = Partial::default();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            continue;
        };
        let v = Some(v.trim().to_string()).filter(|v| !v.is_empty());
        match k.trim() {
            "api_url" => out.api_url = v,
            "api_key" => out.api_key = v,
            "project" => out.project = v,
            _ => {}
        }
    }
    out
}

pub fn resolve(flags: &Partial, env: &HashMap<String, String>, file: Option<&str>) -> Settings {
    let file = file.map(parse_file).unwrap_or_default();
    let from_env = |name: &str| env.get(name).filter(|v| !v.is_empty()).cloned();
    Settings {
        api_url: flags
            .api_url
            .clone()
            .or_else(|| from_env(ENV_API_URL))
            .or(file.api_url)
            .unwrap_or_else(|| DEFAULT_API_URL.to_string())
            .trim_end_matches('/')
            .to_string(),
        api_key: flags
            .api_key
            .clone()
            .or_else(|| from_env(ENV_API_KEY))
            .or(file.api_key),
        project: flags.project.clone().or(file.project),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn precedence_is_flags_env_file() {
        let file = "# mine\napi_url = http://file\napi_key = filekey\nproject = p\n";
        let all = Partial {
            api_url: Some("http://flag/".into()),
            api_key: Some("flagkey".into()),
            project: None,
        };
        let e = env(&[(ENV_API_URL, "http://env"), (ENV_API_KEY, "envkey")]);

        let s = resolve(&all, &e, Some(file));
        assert_eq!(s.api_url, "http://flag");
        assert_eq!(s.api_key.as_deref(), Some("flagkey"));
        assert_eq!(s.project.as_deref(), Some("p"));

        let s = resolve(&Partial::default(), &e, Some(file));
        assert_eq!(s.api_url, "http://env");
        assert_eq!(s.api_key.as_deref(), Some("envkey"));

        let s = resolve(&Partial::default(), &env(&[]), Some(file));
        assert_eq!(s.api_url, "http://file");
        assert_eq!(s.api_key.as_deref(), Some("filekey"));

        let s = resolve(&Partial::default(), &env(&[]), None);
        assert_eq!(s.api_url, DEFAULT_API_URL);
        assert_eq!(s.api_key, None);
    }

    #[test]
    fn ignores_noise_in_the_file() {
        let p = parse_file("garbage\nother = 1\napi_key =\n");
        assert_eq!(p, Partial::default());
    }
}
