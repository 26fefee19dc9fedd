//! Deep-copy policies: which members a traversal visits, and with which
//! data-motion direction.
//!
//! A policy without any `include` clause starts from the default member set
//! (every pointer and nested record). A policy with `include` clauses visits
//! only the listed members. `exclude` always wins. A direction clause on a
//! member that is neither included nor excluded includes it.
//!
//! Clauses declared under `T::*` are merged in front of every resolution for
//! `T`, including `default`. Later direction clauses override earlier ones;
//! an include/exclude overlap is a [`PolicyError::ConflictingClause`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::dsl::{ClauseKind, PolicyDecl, PolicyName};
use crate::types::{Member, TypeDef, TypeRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    In,
    Out,
    InOut,
    Create,
    NoCreate,
}

impl Direction {
    pub fn copies_in(self) -> bool {
        matches!(self, Direction::In | Direction::InOut)
    }

    pub fn copies_out(self) -> bool {
        matches!(self, Direction::Out | Direction::InOut)
    }

    fn from_clause(kind: ClauseKind) -> Option<Self> {
        Some(match kind {
            ClauseKind::In => Direction::In,
            ClauseKind::Out => Direction::Out,
            ClauseKind::InOut => Direction::InOut,
            ClauseKind::Create => Direction::Create,
            ClauseKind::NoCreate => Direction::NoCreate,
            ClauseKind::Include | ClauseKind::Exclude => return None,
        })
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::In => "in",
            Direction::Out => "out",
            Direction::InOut => "inout",
            Direction::Create => "create",
            Direction::NoCreate => "nocreate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Inherited,
    MemberPolicyOverride,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EffectiveMemberAction {
    pub traverse: bool,
    pub direction: Direction,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyClause {
    pub kind: ClauseKind,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub owner: String,
    pub name: PolicyName,
    pub clauses: Vec<PolicyClause>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("no policy `{name}` declared for type `{ty}`")]
    UnknownPolicy { ty: String, name: String },
    #[error("policy `{ty}::{policy}` both includes and excludes `{member}`")]
    ConflictingClause {
        ty: String,
        policy: String,
        member: String,
    },
    #[error("policy `{ty}::{policy}` names unknown member `{member}`")]
    UnknownMember {
        ty: String,
        policy: String,
        member: String,
    },
    #[error("policy `{policy}` is declared for unknown type `{ty}`")]
    UnknownType { ty: String, policy: String },
    #[error("`{ty}::default` is reserved; use `{ty}::*` to extend the default policy")]
    ReservedName { ty: String },
}

/// The implicit policy for `ty`: every traversable member, directions inherited.
pub fn default_policy(ty: &TypeDef) -> Policy {
    Policy {
        owner: ty.name.clone(),
        name: PolicyName::Default,
        clauses: Vec::new(),
    }
}

impl Policy {
    fn members_of(&self, kind: ClauseKind) -> BTreeSet<&str> {
        self.clauses
            .iter()
            .filter(|c| c.kind == kind)
            .flat_map(|c| c.members.iter().map(String::as_str))
            .collect()
    }

    fn has_includes(&self) -> bool {
        self.clauses.iter().any(|c| c.kind == ClauseKind::Include)
    }

    /// Last direction clause naming `member`.
    pub fn direction_for(&self, member: &str) -> Option<Direction> {
        self.clauses
            .iter()
            .rev()
            .filter(|c| c.members.iter().any(|m| m == member))
            .find_map(|c| Direction::from_clause(c.kind))
    }

    /// First member named by both an include and an exclude clause.
    pub fn conflict(&self) -> Option<String> {
        let inc = self.members_of(ClauseKind::Include);
        let exc = self.members_of(ClauseKind::Exclude);
        inc.intersection(&exc).next().map(|m| m.to_string())
    }

    pub fn is_traversed(&self, member: &Member) -> bool {
        if self.members_of(ClauseKind::Exclude).contains(member.name.as_str()) {
            return false;
        }
        let listed = if self.has_includes() {
            self.members_of(ClauseKind::Include).contains(member.name.as_str())
        } else {
            member.kind.is_traversable()
        };
        listed || self.direction_for(&member.name).is_some()
    }

    /// Members of `ty` a traversal under this policy descends into.
    pub fn traversed_members<'t>(&self, ty: &'t TypeDef) -> Vec<&'t str> {
        ty.members
            .iter()
            .filter(|m| m.kind.is_traversable() && self.is_traversed(m))
            .map(|m| m.name.as_str())
            .collect()
    }

    /// Resolves one member's action. `self` must be the applicable policy of
    /// the type that declares `member`.
    pub fn member_action(&self, member: &Member, inherited: Direction) -> EffectiveMemberAction {
        if !self.is_traversed(member) {
            return EffectiveMemberAction {
                traverse: false,
                direction: inherited,
                origin: Origin::Inherited,
            };
        }
        match self.direction_for(&member.name) {
            Some(direction) => EffectiveMemberAction {
                traverse: true,
                direction,
                origin: Origin::MemberPolicyOverride,
            },
            None => EffectiveMemberAction {
                traverse: true,
                direction: inherited,
                origin: Origin::Inherited,
            },
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PolicyTable {
    policies: BTreeMap<(String, PolicyName), Policy>,
}

impl PolicyTable {
    /// Validates and registers policy declarations against `types`.
    pub fn build(decls: &[&PolicyDecl], types: &TypeRegistry) -> Result<Self, Vec<PolicyError>> {
        let mut table = PolicyTable::default();
        let mut errors = Vec::new();
        for decl in decls {
            let owner = decl.owner.node.clone();
            let name = decl.name.node.clone();
            let Some(ty) = types.get(&owner) else {
                errors.push(PolicyError::UnknownType {
                    ty: owner,
                    policy: name.to_string(),
                });
                continue;
            };
            if name == PolicyName::Default {
                errors.push(PolicyError::ReservedName { ty: owner });
                continue;
            }
            let policy = Policy {
                owner: owner.clone(),
                name: name.clone(),
                clauses: decl
                    .clauses
                    .iter()
                    .map(|c| PolicyClause {
                        kind: c.node.kind,
                        members: c.node.members.iter().map(|m| m.node.clone()).collect(),
                    })
                    .collect(),
            };
            for clause in &policy.clauses {
                for m in &clause.members {
                    if ty.member(m).is_none() {
                        errors.push(PolicyError::UnknownMember {
                            ty: owner.clone(),
                            policy: name.to_string(),
                            member: m.clone(),
                        });
                    }
                }
            }
            if let Some(member) = policy.conflict() {
                errors.push(PolicyError::ConflictingClause {
                    ty: owner.clone(),
                    policy: name.to_string(),
                    member,
                });
            }
            table.policies.insert((owner, name), policy);
        }
        // merged `*` + named conflicts
        if errors.is_empty() {
            for (ty_name, name) in table.policies.keys() {
                if let Some(ty) = types.get(ty_name) {
                    if let Err(e) = table.resolve(ty, name) {
                        errors.push(e);
                    }
                }
            }
        }
        if errors.is_empty() {
            Ok(table)
        } else {
            Err(errors)
        }
    }

    pub fn has(&self, ty: &str, name: &PolicyName) -> bool {
        matches!(name, PolicyName::Default | PolicyName::Star)
            || self.policies.contains_key(&(ty.to_string(), name.clone()))
    }

    /// `*` clauses first, then the requested policy's clauses.
    pub fn resolve(&self, ty: &TypeDef, requested: &PolicyName) -> Result<Policy, PolicyError> {
        let mut merged = default_policy(ty);
        merged.name = requested.clone();
        if let Some(star) = self.policies.get(&(ty.name.clone(), PolicyName::Star)) {
            merged.clauses.extend(star.clauses.iter().cloned());
        }
        match requested {
            PolicyName::Default | PolicyName::Star => {}
            PolicyName::Named(_) => {
                let named = self
                    .policies
                    .get(&(ty.name.clone(), requested.clone()))
                    .ok_or_else(|| PolicyError::UnknownPolicy {
                        ty: ty.name.clone(),
                        name: requested.to_string(),
                    })?;
                merged.clauses.extend(named.clauses.iter().cloned());
            }
        }
        if let Some(member) = merged.conflict() {
            return Err(PolicyError::ConflictingClause {
                ty: ty.name.clone(),
                policy: requested.to_string(),
                member,
            });
        }
        Ok(merged)
    }
}
