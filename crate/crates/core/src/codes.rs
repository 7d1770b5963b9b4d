//! Fixed-width numeric region identifiers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

macro_rules! digit_code {
    ($(#[$meta:meta])* $name:ident, $width:literal) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name([u8; $width]);

        impl $name {
            pub const WIDTH: usize = $width;

            pub fn as_str(&self) -> &str {
                // only ASCII digits are ever stored
                std::str::from_utf8(&self.0).expect("ascii digits")
            }

            /// Zero-padded code for `n`; `None` when `n` does not fit the width.
            pub fn from_index(n: u64) -> Option<Self> {
                let s = format!("{:0width$}", n, width = $width);
                s.parse().ok()
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Error> {
                let b = s.as_bytes();
                if b.len() != $width || !b.iter().all(u8::is_ascii_digit) {
                    return Err(Error::BadCode(s.to_string()));
                }
                let mut out = [0u8; $width];
                out.copy_from_slice(b);
                Ok($name(out))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.as_str())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

digit_code!(
    /// Five-digit code shared by zips (ZCTAs) and county FIPS codes.
    RegionCode,
    5
);

digit_code!(
    /// Two-digit state FIPS code.
    StateFips,
    2
);

pub type ZipCode = RegionCode;
pub type CountyFips = RegionCode;

/// FIPS codes of the 48 contiguous states plus D.C.
pub const CONUS_STATE_FIPS: [&str; 49] = [
    "01", "04", "05", "06", "08", "09", "10", "11", "12", "13", "16", "17", "18", "19", "20", "21",
    "22", "23", "24", "25", "26", "27", "28", "29", "30", "31", "32", "33", "34", "35", "36", "37",
    "38", "39", "40", "41", "42", "44", "45", "46", "47", "48", "49", "50", "51", "53", "54", "55",
    "56",
];

pub const TEXAS: &str = "48";
pub const FLORIDA: &str = "12";
