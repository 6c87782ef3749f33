use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One leave-one-subject-out split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub test: String,
    pub train: Vec<String>,
}

/// One fold per distinct subject, in sorted subject order.
pub fn loso_split<S: AsRef<str>>(subjects: &[S]) -> Result<Vec<Fold>> {
    let mut ids: Vec<String> = subjects.iter().map(|s| s.as_ref().to_string()).collect();
    ids.sort();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "leave-one-subject-out needs at least 2 subjects, got {}",
            ids.len()
        )));
    }
    Ok(ids
        .iter()
        .map(|t| Fold {
            test: t.clone(),
            train: ids.iter().filter(|s| *s != t).cloned().collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds() {
        let f = loso_split(&["b", "a"]).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0], Fold { test: "a".into(), train: vec!["b".into()] });
        assert!(loso_split(&["a", "a"]).is_err());
        let ten: Vec<String> = (0..10).map(|i| format!("P{i}")).collect();
        assert_eq!(loso_split(&ten).unwrap().len(), 10);
    }
}
