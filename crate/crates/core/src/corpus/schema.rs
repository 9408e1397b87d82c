use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::RawRecord;
use crate::error::{Error, Result};

/// One categorical context: its record field name and the ordered list of
/// values it can take (index = one-hot position).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextType {
    pub name: String,
    pub values: Vec<String>,
}

impl ContextType {
    pub fn new(name: impl Into<String>, values: Vec<String>) -> Self {
        ContextType {
            name: name.into(),
            values,
        }
    }

    /// A type whose values are just `0..cardinality`, for synthetic data.
    pub fn anonymous(name: impl Into<String>, cardinality: usize) -> Self {
        ContextType::new(name, (0..cardinality).map(|i| i.to_string()).collect())
    }

    pub fn cardinality(&self) -> usize {
        self.values.len()
    }

    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }
}

/// Ordered context types. The context encoder concatenates embeddings in
/// this order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSchema {
    types: Vec<ContextType>,
}

impl ContextSchema {
    pub const RATING: &'static str = "rating";
    pub const PRODUCT: &'static str = "product";

    pub fn new(types: Vec<ContextType>) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::invalid("context schema needs at least one context type"));
        }
        let mut seen = BTreeSet::new();
        for t in &types {
            if t.cardinality() == 0 {
                return Err(Error::invalid(format!("context type {} has no values", t.name)));
            }
            if !seen.insert(t.name.as_str()) {
                return Err(Error::invalid(format!("duplicate context type {}", t.name)));
            }
        }
        Ok(ContextSchema { types })
    }

    /// Schema of anonymous types with the given cardinalities.
    pub fn with_cardinalities(cards: &[usize]) -> Result<Self> {
        ContextSchema::new(
            cards
                .iter()
                .enumerate()
                .map(|(i, &k)| ContextType::anonymous(format!("c{i}"), k))
                .collect(),
        )
    }

    /// Schema for review records over the requested fields, in order.
    /// Ratings always have the five values 1..=5; products are the sorted set
    /// of ids seen in `records`.
    pub fn for_reviews(fields: &[&str], records: &[RawRecord]) -> Result<Self> {
        let mut types = Vec::with_capacity(fields.len());
        for &field in fields {
            match field {
                Self::RATING => types.push(ContextType::new(
                    Self::RATING,
                    (1..=5).map(|r: u8| r.to_string()).collect(),
                )),
                Self::PRODUCT => {
                    let products: BTreeSet<&str> =
                        records.iter().map(|r| r.product.as_str()).collect();
                    types.push(ContextType::new(
                        Self::PRODUCT,
                        products.into_iter().map(str::to_string).collect(),
                    ));
                }
                other => return Err(Error::invalid(format!("unknown context field {other}"))),
            }
        }
        ContextSchema::new(types)
    }

    pub fn types(&self) -> &[ContextType] {
        &self.types
    }

    /// Number of context types.
    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.types.iter().map(ContextType::cardinality).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t.name == name)
    }
}
