//! Flavors and per-domain capacity accounting.

use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Size {
    Small,
    Medium,
    Large,
}

impl Size {
    /// Ascending order.
    pub const ALL: [Size; 3] = [Size::Small, Size::Medium, Size::Large];

    pub fn as_str(self) -> &'static str {
        match self {
            Size::Small => "small",
            Size::Medium => "medium",
            Size::Large => "large",
        }
    }

    pub fn rank(self) -> i32 {
        match self {
            Size::Small => 0,
            Size::Medium => 1,
            Size::Large => 2,
        }
    }
}

impl FromStr for Size {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "small" => Ok(Size::Small),
            "medium" => Ok(Size::Medium),
            "large" => Ok(Size::Large),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Size {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// vCPU, RAM (GB) and disk (GB).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resources {
    pub vcpu: u64,
    pub ram_gb: u64,
    pub disk_gb: u64,
}

impl Resources {
    pub const ZERO: Resources = Resources::new(0, 0, 0);

    pub const fn new(vcpu: u64, ram_gb: u64, disk_gb: u64) -> Self {
        Self {
            vcpu,
            ram_gb,
            disk_gb,
        }
    }

    pub fn times(self, n: u64) -> Self {
        Self::new(self.vcpu * n, self.ram_gb * n, self.disk_gb * n)
    }

    pub fn fits_in(self, other: Resources) -> bool {
        self.vcpu <= other.vcpu && self.ram_gb <= other.ram_gb && self.disk_gb <= other.disk_gb
    }

    pub fn checked_sub(self, rhs: Resources) -> Option<Resources> {
        Some(Resources::new(
            self.vcpu.checked_sub(rhs.vcpu)?,
            self.ram_gb.checked_sub(rhs.ram_gb)?,
            self.disk_gb.checked_sub(rhs.disk_gb)?,
        ))
    }

    /// How many copies of `unit` fit in `self`.
    pub fn copies_of(self, unit: Resources) -> u64 {
        [
            (self.vcpu, unit.vcpu),
            (self.ram_gb, unit.ram_gb),
            (self.disk_gb, unit.disk_gb),
        ]
        .into_iter()
        .filter(|(_, u)| *u > 0)
        .map(|(have, u)| have / u)
        .min()
        .unwrap_or(u64::MAX)
    }
}

impl Add for Resources {
    type Output = Resources;

    fn add(self, rhs: Resources) -> Resources {
        Resources::new(
            self.vcpu + rhs.vcpu,
            self.ram_gb + rhs.ram_gb,
            self.disk_gb + rhs.disk_gb,
        )
    }
}

impl Sub for Resources {
    type Output = Resources;

    /// Panics on underflow; callers check with [`Resources::fits_in`] first.
    fn sub(self, rhs: Resources) -> Resources {
        self.checked_sub(rhs).expect("resource underflow")
    }
}

impl fmt::Display for Resources {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} vCPU, {} GB RAM, {} GB disk",
            self.vcpu, self.ram_gb, self.disk_gb
        )
    }
}

pub type Flavor = Resources;

/// Size → resource footprint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlavorTable(pub IndexMap<Size, Flavor>);

impl Default for FlavorTable {
    fn default() -> Self {
        let mut table = IndexMap::new();
        table.insert(Size::Small, Resources::new(1, 2, 20));
        table.insert(Size::Medium, Resources::new(2, 4, 40));
        table.insert(Size::Large, Resources::new(4, 8, 80));
        FlavorTable(table)
    }
}

impl FlavorTable {
    pub fn get(&self, size: Size) -> Option<Flavor> {
        self.0.get(&size).copied()
    }

    pub fn sizes(&self) -> impl Iterator<Item = Size> + '_ {
        self.0.keys().copied()
    }
}

/// Capacity ledger of one domain. `used + reserved + free == total` on every
/// dimension after every operation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainCapacity {
    pub total: Resources,
    pub used: Resources,
    pub reserved: Resources,
    pub free: Resources,
}

impl DomainCapacity {
    pub fn new(total: Resources) -> Self {
        Self {
            total,
            used: Resources::ZERO,
            reserved: Resources::ZERO,
            free: total,
        }
    }

    pub fn is_conserved(&self) -> bool {
        self.used + self.reserved + self.free == self.total
    }

    pub(crate) fn allocate_from_free(&mut self, amount: Resources) -> bool {
        if !amount.fits_in(self.free) {
            return false;
        }
        self.free = self.free - amount;
        self.used = self.used + amount;
        true
    }

    pub(crate) fn reserve_from_free(&mut self, amount: Resources) -> bool {
        if !amount.fits_in(self.free) {
            return false;
        }
        self.free = self.free - amount;
        self.reserved = self.reserved + amount;
        true
    }

    pub(crate) fn use_reserved(&mut self, amount: Resources) {
        self.reserved = self.reserved - amount;
        self.used = self.used + amount;
    }

    pub(crate) fn release_reserved(&mut self, amount: Resources) {
        self.reserved = self.reserved - amount;
        self.free = self.free + amount;
    }

    pub(crate) fn release_used(&mut self, amount: Resources) {
        self.used = self.used - amount;
        self.free = self.free + amount;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copies_of_ignores_zero_dimensions() {
        let free = Resources::new(3, 4096, 200_000);
        assert_eq!(free.copies_of(Resources::new(4, 8, 80)), 0);
        assert_eq!(free.copies_of(Resources::new(2, 4, 40)), 1);
        assert_eq!(free.copies_of(Resources::new(1, 0, 0)), 3);
    }

    #[test]
    fn ledger_moves_conserve() {
        let mut d = DomainCapacity::new(Resources::new(10, 20, 200));
        assert!(d.reserve_from_free(Resources::new(4, 8, 80)));
        d.use_reserved(Resources::new(2, 4, 40));
        d.release_reserved(Resources::new(2, 4, 40));
        assert!(d.allocate_from_free(Resources::new(1, 2, 20)));
        d.release_used(Resources::new(1, 2, 20));
        assert!(d.is_conserved());
        assert!(!d.allocate_from_free(Resources::new(11, 0, 0)));
        assert_eq!(d.free + d.used, d.total);
    }
}
