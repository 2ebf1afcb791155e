//! Two-visit change classes, net recovery and the agreement partition.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::OccupancyLabel;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChangeError {
    #[error("agreement categories need three non-excluded change classes")]
    ExcludedInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChangeClass {
    Recovered,
    Deteriorated,
    StableOccupied,
    StableNotOccupied,
    Excluded,
}

impl ChangeClass {
    pub const ALL: [ChangeClass; 5] = [
        ChangeClass::Recovered,
        ChangeClass::Deteriorated,
        ChangeClass::StableOccupied,
        ChangeClass::StableNotOccupied,
        ChangeClass::Excluded,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ChangeClass::Recovered => "Recovered",
            ChangeClass::Deteriorated => "Deteriorated",
            ChangeClass::StableOccupied => "StableOccupied",
            ChangeClass::StableNotOccupied => "StableNotOccupied",
            ChangeClass::Excluded => "Excluded",
        }
    }

    pub fn is_change(&self) -> bool {
        matches!(self, ChangeClass::Recovered | ChangeClass::Deteriorated)
    }

    /// Signed change: +1 Recovered, -1 Deteriorated, 0 otherwise.
    pub fn signed(&self) -> i32 {
        match self {
            ChangeClass::Recovered => 1,
            ChangeClass::Deteriorated => -1,
            _ => 0,
        }
    }
}

impl fmt::Display for ChangeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChangeClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown change class {s:?}"))
    }
}

pub fn change_class(v1: OccupancyLabel, v2: OccupancyLabel) -> ChangeClass {
    use OccupancyLabel::*;
    match (v1, v2) {
        (NotOccupied, Occupied) => ChangeClass::Recovered,
        (Occupied, NotOccupied) => ChangeClass::Deteriorated,
        (Occupied, Occupied) => ChangeClass::StableOccupied,
        (NotOccupied, NotOccupied) => ChangeClass::StableNotOccupied,
        _ => ChangeClass::Excluded,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeRecord {
    pub object_id: u32,
    pub v1: OccupancyLabel,
    pub v2: OccupancyLabel,
    pub change_class: ChangeClass,
}

impl ChangeRecord {
    pub fn new(object_id: u32, v1: OccupancyLabel, v2: OccupancyLabel) -> Self {
        Self { object_id, v1, v2, change_class: change_class(v1, v2) }
    }
}

/// One record per parcel in `parcels`; a label missing from either visit counts as Uncertain.
pub fn change_records(
    parcels: impl IntoIterator<Item = u32>,
    v1: &BTreeMap<u32, OccupancyLabel>,
    v2: &BTreeMap<u32, OccupancyLabel>,
) -> Vec<ChangeRecord> {
    let get = |m: &BTreeMap<u32, OccupancyLabel>, id| m.get(&id).copied().unwrap_or(OccupancyLabel::Uncertain);
    parcels.into_iter().map(|id| ChangeRecord::new(id, get(v1, id), get(v2, id))).collect()
}

/// Recovered minus Deteriorated.
pub fn net_recovery(changes: &[ChangeRecord]) -> i64 {
    changes.iter().map(|c| c.change_class.signed() as i64).sum()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ChangeSummary {
    pub recovered: usize,
    pub deteriorated: usize,
    pub stable_occupied: usize,
    pub stable_not_occupied: usize,
    pub excluded: usize,
    pub total: usize,
    pub net: i64,
    /// Fraction of parcels with a usable change class.
    pub coverage: f64,
}

pub fn summarize(changes: &[ChangeRecord]) -> ChangeSummary {
    let mut s = ChangeSummary { total: changes.len(), ..Default::default() };
    for c in changes {
        match c.change_class {
            ChangeClass::Recovered => s.recovered += 1,
            ChangeClass::Deteriorated => s.deteriorated += 1,
            ChangeClass::StableOccupied => s.stable_occupied += 1,
            ChangeClass::StableNotOccupied => s.stable_not_occupied += 1,
            ChangeClass::Excluded => s.excluded += 1,
        }
    }
    s.net = s.recovered as i64 - s.deteriorated as i64;
    s.coverage = if s.total == 0 { 0.0 } else { (s.total - s.excluded) as f64 / s.total as f64 };
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgreementCategory {
    PerfectNoChange,
    PerfectChange,
    GtTwoStageAgree,
    GtOneStageAgree,
    MethodsAgreeGtDiffers,
}

impl AgreementCategory {
    pub const ALL: [AgreementCategory; 5] = [
        AgreementCategory::PerfectNoChange,
        AgreementCategory::PerfectChange,
        AgreementCategory::GtTwoStageAgree,
        AgreementCategory::GtOneStageAgree,
        AgreementCategory::MethodsAgreeGtDiffers,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AgreementCategory::PerfectNoChange => "PerfectNoChange",
            AgreementCategory::PerfectChange => "PerfectChange",
            AgreementCategory::GtTwoStageAgree => "GtTwoStageAgree",
            AgreementCategory::GtOneStageAgree => "GtOneStageAgree",
            AgreementCategory::MethodsAgreeGtDiffers => "MethodsAgreeGtDiffers",
        }
    }
}

impl fmt::Display for AgreementCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Category by exact change-class equality. `Ok(None)` is a three-way
/// disagreement, which belongs to no category and is reported for audit.
pub fn agreement_category(
    gt: ChangeClass,
    one_stage: ChangeClass,
    two_stage: ChangeClass,
) -> Result<Option<AgreementCategory>, ChangeError> {
    if [gt, one_stage, two_stage].contains(&ChangeClass::Excluded) {
        return Err(ChangeError::ExcludedInput);
    }
    let cat = if gt == one_stage && gt == two_stage {
        if gt.is_change() {
            AgreementCategory::PerfectChange
        } else {
            AgreementCategory::PerfectNoChange
        }
    } else if two_stage == gt {
        AgreementCategory::GtTwoStageAgree
    } else if one_stage == gt {
        AgreementCategory::GtOneStageAgree
    } else if one_stage == two_stage {
        AgreementCategory::MethodsAgreeGtDiffers
    } else {
        return Ok(None);
    };
    Ok(Some(cat))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub object_id: u32,
    pub category: Option<AgreementCategory>,
}

impl AgreementRow {
    pub fn is_audit(&self) -> bool {
        self.category.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AgreementTable {
    pub rows: Vec<AgreementRow>,
    pub counts: BTreeMap<AgreementCategory, usize>,
    pub audit: usize,
    /// Parcels where all three sources have a usable change class.
    pub masked: usize,
    pub total: usize,
}

impl AgreementTable {
    pub fn count(&self, c: AgreementCategory) -> usize {
        self.counts.get(&c).copied().unwrap_or(0)
    }

    pub fn coverage(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.masked as f64 / self.total as f64
        }
    }
}

/// Partitions the parcels present in all three inputs. Records are matched
/// by object id; parcels excluded by any source are left out of the mask.
pub fn agreement_table(gt: &[ChangeRecord], one: &[ChangeRecord], two: &[ChangeRecord]) -> AgreementTable {
    let index = |v: &[ChangeRecord]| v.iter().map(|c| (c.object_id, c.change_class)).collect::<BTreeMap<_, _>>();
    let (o, t) = (index(one), index(two));
    let mut table = AgreementTable { total: gt.len(), ..Default::default() };
    for c in AgreementCategory::ALL {
        table.counts.insert(c, 0);
    }
    let mut ids: Vec<(u32, ChangeClass)> = gt.iter().map(|c| (c.object_id, c.change_class)).collect();
    ids.sort();
    for (id, g) in ids {
        let (Some(&oc), Some(&tc)) = (o.get(&id), t.get(&id)) else { continue };
        let Ok(cat) = agreement_category(g, oc, tc) else { continue };
        table.masked += 1;
        match cat {
            Some(c) => *table.counts.entry(c).or_default() += 1,
            None => table.audit += 1,
        }
        table.rows.push(AgreementRow { object_id: id, category: cat });
    }
    table
}

#[derive(Debug, Serialize, Deserialize)]
struct ChangeCsvRow {
    object_id: u32,
    v1: String,
    v2: String,
    change_class: String,
}

pub fn write_change_csv(path: &Path, changes: &[ChangeRecord]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for c in changes {
        w.serialize(ChangeCsvRow {
            object_id: c.object_id,
            v1: c.v1.to_string(),
            v2: c.v2.to_string(),
            change_class: c.change_class.to_string(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_change_csv(path: &Path) -> Result<Vec<ChangeRecord>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    r.deserialize::<ChangeCsvRow>()
        .map(|row| {
            let row = row.map_err(|e| format!("{}: {e}", path.display()))?;
            Ok(ChangeRecord::new(row.object_id, row.v1.parse()?, row.v2.parse()?))
        })
        .collect()
}

pub fn write_agreement_csv(path: &Path, table: &AgreementTable) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["object_id", "category", "audit"])?;
    for r in &table.rows {
        w.write_record([
            r.object_id.to_string(),
            r.category.map(|c| c.to_string()).unwrap_or_default(),
            (r.is_audit() as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
