use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::pixel_mean;
use crate::uq::{PredictionBundle, SensitivityResult};
use crate::view::ViewPoint;

macro_rules! id_enum {
    ($(#[$m:meta])* $name:ident, $kind:literal { $($var:ident => $id:literal $(| $alias:literal)*),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $id)] $var),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];

            pub fn id(&self) -> &'static str {
                match self {
                    $($name::$var => $id),+
                }
            }
        }

        impl std::str::FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($id $(| $alias)* => Ok($name::$var),)+
                    _ => Err(Error::Unknown { kind: $kind, name: s.to_string() }),
                }
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.id())
            }
        }
    };
}

id_enum!(Method, "method" {
    Mc => "mc" | "mc_dropout",
    Ensemble => "ens" | "ensemble",
});

id_enum!(Quantity, "quantity" {
    Uncertainty => "uncertainty",
    Error => "error",
    ErrorStd => "error_std",
    Sensitivity => "sensitivity",
    SensitivityStd => "sensitivity_std",
});

id_enum!(Channel, "channel" {
    R => "r" | "R",
    G => "g" | "G",
    B => "b" | "B",
    Combined => "combined",
});

impl Channel {
    fn slot(&self) -> usize {
        match self {
            Channel::R => 0,
            Channel::G => 1,
            Channel::B => 2,
            Channel::Combined => 3,
        }
    }
}

/// Pixel means of one method's maps for one view; slots are R, G, B and
/// combined. The combined slot is the mean of the combined map, equal to
/// the channel sum up to f32 rounding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregates {
    pub uncertainty: [f32; 4],
    pub error: [f32; 4],
    pub error_std: [f32; 4],
    pub sensitivity: f32,
    pub sensitivity_std: f32,
}

/// Pixel means of the three channel maps and of the combined map.
fn aggregate(channels: &[Vec<f32>; 3], combined: &[f32]) -> [f32; 4] {
    let c = channels.each_ref().map(|m| pixel_mean(m));
    [c[0], c[1], c[2], pixel_mean(combined)]
}

impl MethodAggregates {
    pub fn from_bundle(bundle: &PredictionBundle, sens: &SensitivityResult) -> Self {
        Self {
            uncertainty: aggregate(&bundle.channel_uncertainty, &bundle.combined_uncertainty),
            error: aggregate(&bundle.channel_error, &bundle.combined_error),
            error_std: aggregate(&bundle.channel_error_std, &bundle.combined_error_std),
            sensitivity: sens.mean,
            sensitivity_std: sens.std,
        }
    }

    fn to_f32s(self) -> [f32; 14] {
        let mut out = [0.0; 14];
        out[..4].copy_from_slice(&self.uncertainty);
        out[4..8].copy_from_slice(&self.error);
        out[8..12].copy_from_slice(&self.error_std);
        out[12] = self.sensitivity;
        out[13] = self.sensitivity_std;
        out
    }

    fn from_f32s(v: &[f32]) -> Self {
        let four = |o: usize| [v[o], v[o + 1], v[o + 2], v[o + 3]];
        Self {
            uncertainty: four(0),
            error: four(4),
            error_std: four(8),
            sensitivity: v[12],
            sensitivity_std: v[13],
        }
    }
}

/// f32 values per record in `records.bin`.
pub const RECORD_LEN: usize = 30;

/// Field names of a record, in storage order.
pub const RECORD_FIELDS: [&str; RECORD_LEN] = [
    "theta",
    "phi",
    "mc.uncertainty.r",
    "mc.uncertainty.g",
    "mc.uncertainty.b",
    "mc.uncertainty.combined",
    "mc.error.r",
    "mc.error.g",
    "mc.error.b",
    "mc.error.combined",
    "mc.error_std.r",
    "mc.error_std.g",
    "mc.error_std.b",
    "mc.error_std.combined",
    "mc.sensitivity",
    "mc.sensitivity_std",
    "ens.uncertainty.r",
    "ens.uncertainty.g",
    "ens.uncertainty.b",
    "ens.uncertainty.combined",
    "ens.error.r",
    "ens.error.g",
    "ens.error.b",
    "ens.error.combined",
    "ens.error_std.r",
    "ens.error_std.g",
    "ens.error_std.b",
    "ens.error_std.combined",
    "ens.sensitivity",
    "ens.sensitivity_std",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub theta: f32,
    pub phi: f32,
    pub mc: MethodAggregates,
    pub ens: MethodAggregates,
}

impl SweepRecord {
    pub fn new(view: ViewPoint, mc: MethodAggregates, ens: MethodAggregates) -> Self {
        Self {
            theta: view.theta(),
            phi: view.phi(),
            mc,
            ens,
        }
    }

    pub fn method(&self, method: Method) -> &MethodAggregates {
        match method {
            Method::Mc => &self.mc,
            Method::Ensemble => &self.ens,
        }
    }

    /// Sensitivity quantities exist only for the combined channel.
    pub fn value(&self, method: Method, quantity: Quantity, channel: Channel) -> Result<f32> {
        let a = self.method(method);
        let slot = channel.slot();
        match quantity {
            Quantity::Uncertainty => Ok(a.uncertainty[slot]),
            Quantity::Error => Ok(a.error[slot]),
            Quantity::ErrorStd => Ok(a.error_std[slot]),
            Quantity::Sensitivity | Quantity::SensitivityStd if channel != Channel::Combined => Err(Error::Unknown {
                kind: "channel for sensitivity",
                name: channel.id().to_string(),
            }),
            Quantity::Sensitivity => Ok(a.sensitivity),
            Quantity::SensitivityStd => Ok(a.sensitivity_std),
        }
    }

    pub fn to_f32s(&self) -> [f32; RECORD_LEN] {
        let mut out = [0.0; RECORD_LEN];
        out[0] = self.theta;
        out[1] = self.phi;
        out[2..16].copy_from_slice(&self.mc.to_f32s());
        out[16..30].copy_from_slice(&self.ens.to_f32s());
        out
    }

    pub fn from_f32s(v: &[f32]) -> Result<Self> {
        if v.len() != RECORD_LEN {
            return Err(Error::Shape(format!("record needs {RECORD_LEN} values, got {}", v.len())));
        }
        Ok(Self {
            theta: v[0],
            phi: v[1],
            mc: MethodAggregates::from_f32s(&v[2..16]),
            ens: MethodAggregates::from_f32s(&v[16..30]),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_f32s().iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 4 * RECORD_LEN {
            return Err(Error::Shape(format!("record needs {} bytes, got {}", 4 * RECORD_LEN, bytes.len())));
        }
        let v: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_f32s(&v)
    }

    /// The six PCP axes: MC-Un, MC-Err, MC-ErrStd, Ens-Un, Ens-Err, Ens-ErrStd.
    pub fn pcp_tuple(&self) -> [f32; 6] {
        [
            self.mc.uncertainty[3],
            self.mc.error[3],
            self.mc.error_std[3],
            self.ens.uncertainty[3],
            self.ens.error[3],
            self.ens.error_std[3],
        ]
    }
}
