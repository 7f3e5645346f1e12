//! Model identifiers: the two teachers and the distilled student variants.

use std::fmt;

use distortkd::augmentor::Setup;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub id: &'static str,
    pub setup: Setup,
    pub dat: bool,
    /// Distilled from the domain-adapted teacher.
    pub adapted_teacher: bool,
}

const fn v(id: &'static str, setup: Setup, dat: bool, adapted_teacher: bool) -> Variant {
    Variant {
        id,
        setup,
        dat,
        adapted_teacher,
    }
}

impl Variant {
    /// Every student in the comparison, in table order.
    pub const MATRIX: [Variant; 16] = [
        v("S1", Setup::None, false, false),
        v("S2", Setup::Setup1, false, false),
        v("S3", Setup::Setup2Same, false, false),
        v("S4", Setup::Setup2, false, false),
        v("S5", Setup::Setup1, true, false),
        v("S6", Setup::Setup2, true, false),
        v("S1+DAT", Setup::None, true, false),
        v("S3+DAT", Setup::Setup2Same, true, false),
        v("S1'", Setup::None, false, true),
        v("S2'", Setup::Setup1, false, true),
        v("S3'", Setup::Setup2Same, false, true),
        v("S4'", Setup::Setup2, false, true),
        v("S5'", Setup::Setup1, true, true),
        v("S6'", Setup::Setup2, true, true),
        v("S1'+DAT", Setup::None, true, true),
        v("S3'+DAT", Setup::Setup2Same, true, true),
    ];

    pub fn parse(id: &str) -> Result<Variant> {
        Self::MATRIX
            .iter()
            .find(|v| v.id == id)
            .copied()
            .ok_or_else(|| CliError::UnknownModel(id.to_string()))
    }
}

/// Anything that can be probed, evaluated or visualized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelId {
    Teacher { adapted: bool },
    Student(Variant),
}

impl ModelId {
    pub fn parse(id: &str) -> Result<ModelId> {
        match id {
            "T1" => Ok(ModelId::Teacher { adapted: false }),
            "T1'" => Ok(ModelId::Teacher { adapted: true }),
            _ => Variant::parse(id).map(ModelId::Student),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            ModelId::Teacher { adapted: false } => "T1",
            ModelId::Teacher { adapted: true } => "T1'",
            ModelId::Student(v) => v.id,
        }
    }

    /// File-system friendly form: `'` becomes `p`, `+DAT` becomes `-dat`.
    pub fn slug(&self) -> String {
        slug(self.id())
    }

    pub fn is_teacher(&self) -> bool {
        matches!(self, ModelId::Teacher { .. })
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

pub fn slug(id: &str) -> String {
    id.replace('\'', "p").replace("+DAT", "-dat")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip_and_slugs_are_unique() {
        let mut slugs = Vec::new();
        for v in Variant::MATRIX {
            let m = ModelId::parse(v.id).unwrap();
            assert_eq!(m.id(), v.id);
            slugs.push(m.slug());
        }
        slugs.push(ModelId::parse("T1").unwrap().slug());
        slugs.push(ModelId::parse("T1'").unwrap().slug());
        let n = slugs.len();
        slugs.sort();
        slugs.dedup();
        assert_eq!(slugs.len(), n);
        assert_eq!(slug("S4'"), "S4p");
        assert_eq!(slug("S3'+DAT"), "S3p-dat");
    }

    #[test]
    fn primes_mirror_the_unprimed_variants() {
        for (a, b) in Variant::MATRIX[..8].iter().zip(&Variant::MATRIX[8..]) {
            assert_eq!((a.setup, a.dat), (b.setup, b.dat));
            assert!(!a.adapted_teacher && b.adapted_teacher);
        }
    }

    #[test]
    fn unknown_ids_are_rejected() {
        assert!(matches!(ModelId::parse("S7"), Err(CliError::UnknownModel(_))));
        assert!(ModelId::parse("t1").is_err());
    }
}
