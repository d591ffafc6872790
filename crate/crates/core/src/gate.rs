//! Gate library and the additive area model.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

/// Logic functions available to a node.
///
/// The discriminant is the function gene value stored in a chromosome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum GateFunction {
    Inv = 0,
    And = 1,
    Or = 2,
    Xor = 3,
    Nand = 4,
    Nor = 5,
    Xnor = 6,
}

impl GateFunction {
    pub const COUNT: usize = 7;

    pub const ALL: [GateFunction; Self::COUNT] = [
        GateFunction::Inv,
        GateFunction::And,
        GateFunction::Or,
        GateFunction::Xor,
        GateFunction::Nand,
        GateFunction::Nor,
        GateFunction::Xnor,
    ];

    pub fn from_gene(gene: u32) -> Option<Self> {
        Self::ALL.get(gene as usize).copied()
    }

    #[inline]
    pub fn gene(self) -> u32 {
        self as u32
    }

    /// Cell area in the 45 nm library, in hundredths of a square micrometer.
    pub const fn area(self) -> Area {
        Area(match self {
            GateFunction::Inv => 140,
            GateFunction::And => 234,
            GateFunction::Or => 234,
            GateFunction::Xor => 469,
            GateFunction::Nand => 187,
            GateFunction::Nor => 234,
            GateFunction::Xnor => 469,
        })
    }

    /// INV reads only its first input; the second gene is carried but ignored.
    #[inline]
    pub fn is_unary(self) -> bool {
        self == GateFunction::Inv
    }

    /// Applies the gate to 64 packed lanes at once.
    #[inline(always)]
    pub fn eval_word(self, a: u64, b: u64) -> u64 {
        match self {
            GateFunction::Inv => !a,
            GateFunction::And => a & b,
            GateFunction::Or => a | b,
            GateFunction::Xor => a ^ b,
            GateFunction::Nand => !(a & b),
            GateFunction::Nor => !(a | b),
            GateFunction::Xnor => !(a ^ b),
        }
    }

    pub fn eval_bit(self, a: bool, b: bool) -> bool {
        match self {
            GateFunction::Inv => !a,
            GateFunction::And => a && b,
            GateFunction::Or => a || b,
            GateFunction::Xor => a != b,
            GateFunction::Nand => !(a && b),
            GateFunction::Nor => !(a || b),
            GateFunction::Xnor => a == b,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GateFunction::Inv => "INV",
            GateFunction::And => "AND",
            GateFunction::Or => "OR",
            GateFunction::Xor => "XOR",
            GateFunction::Nand => "NAND",
            GateFunction::Nor => "NOR",
            GateFunction::Xnor => "XNOR",
        }
    }
}

impl fmt::Display for GateFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Circuit area as an integer count of 0.01 µm² units.
///
/// Every library cell has a two-decimal area, so sums are exact and
/// independent of summation order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Area(pub u64);

impl Area {
    pub const ZERO: Area = Area(0);

    pub fn centi(self) -> u64 {
        self.0
    }

    pub fn um2(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl Add for Area {
    type Output = Area;
    fn add(self, rhs: Area) -> Area {
        Area(self.0 + rhs.0)
    }
}

impl AddAssign for Area {
    fn add_assign(&mut self, rhs: Area) {
        self.0 += rhs.0;
    }
}

impl Sum for Area {
    fn sum<I: Iterator<Item = Area>>(iter: I) -> Area {
        iter.fold(Area::ZERO, Add::add)
    }
}

impl fmt::Display for Area {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}
