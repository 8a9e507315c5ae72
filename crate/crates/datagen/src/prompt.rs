//! Weather conditions and prompt keywords.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{BackendError, DatagenError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeatherCondition {
    Rainy,
    Foggy,
    Snowy,
    Cloudy,
    Sunny,
}

impl WeatherCondition {
    pub const ALL: [WeatherCondition; 5] = [
        WeatherCondition::Rainy,
        WeatherCondition::Foggy,
        WeatherCondition::Snowy,
        WeatherCondition::Cloudy,
        WeatherCondition::Sunny,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeatherCondition::Rainy => "rainy",
            WeatherCondition::Foggy => "foggy",
            WeatherCondition::Snowy => "snowy",
            WeatherCondition::Cloudy => "cloudy",
            WeatherCondition::Sunny => "sunny",
        }
    }

    /// Built-in keyword table used when the prompt backend fails.
    pub fn template_keywords(self) -> &'static [&'static str] {
        match self {
            WeatherCondition::Rainy => &["rainy", "dark clouds", "wet pavement", "raindrops", "reflections", "misty air"],
            WeatherCondition::Foggy => &["foggy", "dense fog", "low visibility", "diffuse light", "muted colors", "hazy horizon"],
            WeatherCondition::Snowy => &["snowy", "falling snow", "snow-covered road", "overcast sky", "cold light", "white roofs"],
            WeatherCondition::Cloudy => &["cloudy", "overcast sky", "soft shadows", "gray tones", "flat lighting"],
            WeatherCondition::Sunny => &["sunny", "clear sky", "strong shadows", "warm light", "high contrast"],
        }
    }
}

impl fmt::Display for WeatherCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeatherCondition {
    type Err = DatagenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WeatherCondition::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| {
                DatagenError::Config(format!(
                    "unknown weather condition {s:?} (expected one of rainy, foggy, snowy, cloudy, sunny)"
                ))
            })
    }
}

/// Parses a comma separated condition list, rejecting duplicates.
pub fn parse_conditions(s: &str) -> Result<Vec<WeatherCondition>, DatagenError> {
    let mut out: Vec<WeatherCondition> = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let c: WeatherCondition = part.parse()?;
        if out.contains(&c) {
            return Err(DatagenError::Config(format!("condition {c} listed twice")));
        }
        out.push(c);
    }
    if out.is_empty() {
        return Err(DatagenError::Config("no weather conditions given".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptSource {
    Llm,
    Template,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherPrompt {
    pub condition: WeatherCondition,
    pub keywords: Vec<String>,
    pub source: PromptSource,
}

impl WeatherPrompt {
    pub fn template(condition: WeatherCondition) -> Self {
        WeatherPrompt {
            condition,
            keywords: condition.template_keywords().iter().map(|k| k.to_string()).collect(),
            source: PromptSource::Template,
        }
    }

    /// Keywords as one phrase: `a, b, and c`.
    pub fn text(&self) -> String {
        match self.keywords.as_slice() {
            [] => String::new(),
            [one] => one.clone(),
            [rest @ .., last] => format!("{}, and {last}", rest.join(", ")),
        }
    }
}

/// Keyword generator (typically a language model).
pub trait PromptBackend: Send + Sync {
    fn keywords(&self, sample_id: &str, condition: WeatherCondition) -> Result<Vec<String>, BackendError>;
}

/// Mock: the keywords are just the condition name.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoPromptBackend;

impl PromptBackend for EchoPromptBackend {
    fn keywords(&self, _sample_id: &str, condition: WeatherCondition) -> Result<Vec<String>, BackendError> {
        Ok(vec![condition.to_string()])
    }
}

/// Never fails: backend errors and empty answers fall back to the template table.
pub fn build_weather_prompt(sample_id: &str, condition: WeatherCondition, backend: &dyn PromptBackend) -> WeatherPrompt {
    match backend.keywords(sample_id, condition) {
        Ok(k) if k.iter().any(|w| !w.trim().is_empty()) => WeatherPrompt {
            condition,
            keywords: k.into_iter().filter(|w| !w.trim().is_empty()).collect(),
            source: PromptSource::Llm,
        },
        Ok(_) => {
            log::warn!("prompt backend returned no keywords for {sample_id}/{condition}; using template");
            WeatherPrompt::template(condition)
        }
        Err(e) => {
            log::warn!("prompt backend failed for {sample_id}/{condition}: {e}; using template");
            WeatherPrompt::template(condition)
        }
    }
}
