//! Garment attributes, their closed vocabularies, and the seeded codebook that
//! turns an [`AttributeSet`] into a fixed-length feature vector.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Length of one attribute code vector.
pub const ATTRIBUTE_CODE_DIM: usize = 32;
/// Number of attributes that contribute to the structure encoding.
pub const ENCODED_ATTRIBUTE_COUNT: usize = 10;
/// Length of [`AttributeCodebook::encode`] output.
pub const ENCODED_DIM: usize = ATTRIBUTE_CODE_DIM * ENCODED_ATTRIBUTE_COUNT;
/// Image feature length produced by a ViT-L/14 penultimate layer.
pub const IMAGE_FEATURE_DIM: usize = 768;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Attribute {
    Category,
    Fit,
    Collar,
    SleeveLength,
    Fabric,
    Length,
    WithInnerWear,
    SleevesRolledUp,
    TopOpen,
    TopTuckIn,
    Print,
    SurfaceTexture,
    Age,
    Gender,
}

const YES_NO: &[&str] = &["Yes", "No"];

impl Attribute {
    /// Encoded attributes, in concatenation order.
    pub const ENCODED: [Attribute; ENCODED_ATTRIBUTE_COUNT] = [
        Attribute::Category,
        Attribute::Fit,
        Attribute::Collar,
        Attribute::SleeveLength,
        Attribute::Fabric,
        Attribute::Length,
        Attribute::WithInnerWear,
        Attribute::SleevesRolledUp,
        Attribute::TopOpen,
        Attribute::TopTuckIn,
    ];

    /// Metadata-only attributes; validated but never encoded.
    pub const EXTRA: [Attribute; 4] = [
        Attribute::Print,
        Attribute::SurfaceTexture,
        Attribute::Age,
        Attribute::Gender,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Category => "category",
            Attribute::Fit => "fit",
            Attribute::Collar => "collar",
            Attribute::SleeveLength => "sleeve_length",
            Attribute::Fabric => "fabric",
            Attribute::Length => "length",
            Attribute::WithInnerWear => "with_inner_wear",
            Attribute::SleevesRolledUp => "sleeves_rolled_up",
            Attribute::TopOpen => "top_open",
            Attribute::TopTuckIn => "top_tuck_in",
            Attribute::Print => "print",
            Attribute::SurfaceTexture => "surface_texture",
            Attribute::Age => "age",
            Attribute::Gender => "gender",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        let name = name.trim();
        Self::ENCODED
            .iter()
            .chain(Self::EXTRA.iter())
            .copied()
            .find(|a| a.name() == name)
    }

    pub fn is_encoded(self) -> bool {
        self.encoded_position().is_some()
    }

    fn encoded_position(self) -> Option<usize> {
        Self::ENCODED.iter().position(|&a| a == self)
    }

    fn extra_position(self) -> Option<usize> {
        Self::EXTRA.iter().position(|&a| a == self)
    }

    pub fn vocabulary(self) -> &'static [&'static str] {
        match self {
            Attribute::Category => &[
                "T-shirt",
                "Hoodie",
                "Shirt",
                "Polo",
                "Tank",
                "Vest",
                "Swimsuit",
                "Sweater",
                "Innerwear",
                "Windbreaker",
                "Down Jacket",
                "Jacket",
                "Suit",
                "Waistcoat",
                "Shawl",
                "Dress",
                "Skirt",
                "Knitted Coat",
                "Leather Short Coat",
                "Leather Long Coat",
                "Denim Jacket",
                "Robe",
                "Loungewear Top",
                "Loungewear Dress",
                "Sports Jacket",
                "Knitted Cardigan",
                "Leather Jacket",
            ],
            Attribute::Fit => &["Loose", "Regular", "Slim"],
            Attribute::Collar => &[
                "Suit",
                "Shirt",
                "Notched",
                "Rounded",
                "Ruffled",
                "Naval",
                "Hooded",
                "Polo",
                "V-neck",
                "Square",
                "Round",
                "Strapless",
                "One-shoulder",
                "Off-shoulder",
                "Neckline",
                "Stand-up",
                "Baseball",
            ],
            Attribute::SleeveLength => &["Sleeveless", "Short", "Mid", "Long", "Extra Long"],
            Attribute::Fabric => &[
                "Gauze",
                "Tweed",
                "Fur",
                "Chiffon",
                "Denim",
                "PVC",
                "Micro-Suede",
                "Fleece",
                "Corduroy",
                "Knit",
                "Lace",
                "Synthetic",
                "Stretch",
                "Linen",
                "Wool",
                "Silk",
                "Knitting",
                "Leather",
                "Velvet",
                "Fur Blend",
                "Coated",
                "Mixed",
                "Special Fabric",
            ],
            Attribute::Length => &["Extra Short", "Short", "Medium", "Long", "Extra Long", "Uncertain"],
            Attribute::WithInnerWear | Attribute::SleevesRolledUp | Attribute::TopOpen | Attribute::TopTuckIn => YES_NO,
            // "Floral" appears twice in the source table; lookup takes the first.
            Attribute::Print => &[
                "Floral",
                "Animal",
                "Skull",
                "Character",
                "Paisley",
                "Baroque",
                "Traditional",
                "Cartoon",
                "Artistic",
                "Tech",
                "Hand-painted",
                "Striped",
                "Plaid",
                "Heart",
                "Polka Dot",
                "Star",
                "Tie-dye",
                "Camouflage",
                "Linear",
                "Text",
                "Logo",
                "Geometric",
                "Color Block",
                "Mixed",
                "3D Floral",
                "Floral",
                "Solid Color",
                "Nature Scene",
                "Objects",
            ],
            Attribute::SurfaceTexture => &[
                "Layered",
                "Tied",
                "Slit",
                "Cutout",
                "Ruched",
                "Pleated",
                "Spliced",
                "Ruffle",
                "Contrast Stitching",
                "Quilted",
                "Gathered",
                "Applique",
                "Overlay",
                "Hand Decorated",
                "Beaded",
                "Washed",
                "Dyed",
                "Distressed",
                "Frayed",
                "Printed",
                "Splatter",
                "Foil",
                "Rhinestone",
                "Flocked",
                "Embroidered",
                "Edge Decoration",
                "Embossed",
                "Punched",
                "Knit Rib",
                "No Craft",
            ],
            Attribute::Age => &["Adult", "Child"],
            Attribute::Gender => &["Female", "Male"],
        }
    }

    fn lookup(self, value: &str) -> Result<u16> {
        let value = value.trim();
        self.vocabulary()
            .iter()
            .position(|&v| v == value)
            .map(|i| i as u16)
            .ok_or_else(|| Error::UnknownValue {
                attribute: self.name().to_string(),
                value: value.to_string(),
            })
    }
}

/// The ten encoded garment attributes plus optional metadata attributes.
///
/// Values are stored as vocabulary indices, so a constructed set is always
/// valid.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(try_from = "BTreeMap<String, String>", into = "BTreeMap<String, String>")
)]
pub struct AttributeSet {
    encoded: [u16; ENCODED_ATTRIBUTE_COUNT],
    extra: [Option<u16>; 4],
}

impl AttributeSet {
    /// Builds a set from `(attribute name, value)` pairs. All ten encoded
    /// attributes are required; the metadata attributes are optional.
    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut encoded = [None; ENCODED_ATTRIBUTE_COUNT];
        let mut extra = [None; 4];
        for (name, value) in pairs {
            let attr = Attribute::from_name(name.as_ref())
                .ok_or_else(|| Error::UnknownAttribute(name.as_ref().to_string()))?;
            let idx = attr.lookup(value.as_ref())?;
            if let Some(p) = attr.encoded_position() {
                encoded[p] = Some(idx);
            } else if let Some(p) = attr.extra_position() {
                extra[p] = Some(idx);
            }
        }
        let mut out = [0u16; ENCODED_ATTRIBUTE_COUNT];
        for (i, slot) in encoded.iter().enumerate() {
            out[i] = slot.ok_or(Error::MissingAttribute(Attribute::ENCODED[i].name()))?;
        }
        Ok(Self { encoded: out, extra })
    }

    pub fn get(&self, attr: Attribute) -> Option<&'static str> {
        let idx = match (attr.encoded_position(), attr.extra_position()) {
            (Some(p), _) => Some(self.encoded[p]),
            (_, Some(p)) => self.extra[p],
            _ => None,
        }?;
        attr.vocabulary().get(idx as usize).copied()
    }

    /// Replaces one attribute value.
    pub fn set(&mut self, attr: Attribute, value: &str) -> Result<()> {
        let idx = attr.lookup(value)?;
        if let Some(p) = attr.encoded_position() {
            self.encoded[p] = idx;
        } else if let Some(p) = attr.extra_position() {
            self.extra[p] = Some(idx);
        }
        Ok(())
    }

    pub fn category(&self) -> &'static str {
        Attribute::Category.vocabulary()[self.encoded[0] as usize]
    }

    /// All present `(attribute, value)` pairs, encoded attributes first.
    pub fn iter(&self) -> impl Iterator<Item = (Attribute, &'static str)> + '_ {
        Attribute::ENCODED
            .iter()
            .chain(Attribute::EXTRA.iter())
            .filter_map(move |&a| self.get(a).map(|v| (a, v)))
    }
}

impl TryFrom<BTreeMap<String, String>> for AttributeSet {
    type Error = Error;

    fn try_from(map: BTreeMap<String, String>) -> Result<Self> {
        Self::from_pairs(map)
    }
}

impl From<AttributeSet> for BTreeMap<String, String> {
    fn from(set: AttributeSet) -> Self {
        set.iter().map(|(a, v)| (a.name().to_string(), v.to_string())).collect()
    }
}

/// Fixed pseudo-random code vectors, one per vocabulary entry of every
/// encoded attribute. Codes are uniform in `[-1, 1]` and then L2-normalized;
/// the same seed always yields the same table bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeCodebook {
    seed: u64,
    codes: Vec<Vec<[f64; ATTRIBUTE_CODE_DIM]>>,
}

impl AttributeCodebook {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes = Attribute::ENCODED
            .iter()
            .map(|attr| attr.vocabulary().iter().map(|_| draw_unit_code(&mut rng)).collect())
            .collect();
        Self { seed, codes }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn code(&self, attr: Attribute, value: &str) -> Result<&[f64; ATTRIBUTE_CODE_DIM]> {
        let pos = attr.encoded_position().ok_or(Error::UnknownValue {
            attribute: attr.name().to_string(),
            value: value.trim().to_string(),
        })?;
        let idx = attr.lookup(value)?;
        Ok(&self.codes[pos][idx as usize])
    }

    /// Every `(attribute, value, code)` triple in table order.
    pub fn entries(&self) -> impl Iterator<Item = (Attribute, &'static str, &[f64; ATTRIBUTE_CODE_DIM])> {
        Attribute::ENCODED
            .iter()
            .zip(&self.codes)
            .flat_map(|(&attr, codes)| attr.vocabulary().iter().zip(codes).map(move |(&v, c)| (attr, v, c)))
    }

    /// Concatenates the ten code vectors of `attrs` in [`Attribute::ENCODED`]
    /// order. Output length is [`ENCODED_DIM`].
    pub fn encode(&self, attrs: &AttributeSet) -> Vec<f64> {
        let mut out = Vec::with_capacity(ENCODED_DIM);
        for (pos, &idx) in attrs.encoded.iter().enumerate() {
            out.extend_from_slice(&self.codes[pos][idx as usize]);
        }
        out
    }
}

fn draw_unit_code(rng: &mut ChaCha8Rng) -> [f64; ATTRIBUTE_CODE_DIM] {
    loop {
        let mut code = [0.0; ATTRIBUTE_CODE_DIM];
        for c in code.iter_mut() {
            *c = rng.random_range(-1.0..=1.0);
        }
        let norm = libm::sqrt(code.iter().map(|x| x * x).sum::<f64>());
        if norm > 1e-6 {
            code.iter_mut().for_each(|c| *c /= norm);
            return code;
        }
    }
}

/// Encodes `attrs` with `codebook`.
pub fn encode_attributes(attrs: &AttributeSet, codebook: &AttributeCodebook) -> Vec<f64> {
    codebook.encode(attrs)
}

/// `f_img ++ f_attr` with the default 768 + 320 layout.
pub fn concat_features(f_img: &[f64], f_attr: &[f64]) -> Result<Vec<f64>> {
    concat_features_with(f_img, f_attr, IMAGE_FEATURE_DIM, ENCODED_DIM)
}

pub fn concat_features_with(f_img: &[f64], f_attr: &[f64], img_dim: usize, attr_dim: usize) -> Result<Vec<f64>> {
    if f_img.len() != img_dim {
        return Err(Error::DimMismatch {
            expected: img_dim,
            found: f_img.len(),
        });
    }
    if f_attr.len() != attr_dim {
        return Err(Error::DimMismatch {
            expected: attr_dim,
            found: f_attr.len(),
        });
    }
    let mut out = Vec::with_capacity(img_dim + attr_dim);
    out.extend_from_slice(f_img);
    out.extend_from_slice(f_attr);
    Ok(out)
}
