use std::fmt;
use std::str::FromStr;

/// The two classes. `Stressed` is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Healthy,
    Stressed,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Healthy, Label::Stressed];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Healthy => "healthy",
            Label::Stressed => "stressed",
        }
    }

    /// Binary target: healthy → 0, stressed → 1.
    pub fn target(self) -> f64 {
        match self {
            Label::Healthy => 0.0,
            Label::Stressed => 1.0,
        }
    }

    pub fn from_target(target: f64) -> Label {
        if target >= 0.5 {
            Label::Stressed
        } else {
            Label::Healthy
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownLabel(pub String);

impl FromStr for Label {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "healthy" => Ok(Label::Healthy),
            "stressed" => Ok(Label::Stressed),
            _ => Err(UnknownLabel(s.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_is_case_insensitive() {
        assert_eq!("Stressed".parse::<Label>().unwrap(), Label::Stressed);
        assert_eq!(" HEALTHY ".parse::<Label>().unwrap(), Label::Healthy);
        assert!("weed".parse::<Label>().is_err());
    }

    #[test]
    fn targets() {
        assert_eq!(Label::Healthy.target(), 0.0);
        assert_eq!(Label::Stressed.target(), 1.0);
        assert_eq!(Label::from_target(1.0), Label::Stressed);
    }
}
