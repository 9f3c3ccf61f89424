use std::collections::HashMap;

use super::TopomapError;

const STANDARD_CSV: &str = include_str!("../../assets/electrodes.csv");

#[derive(Debug, Clone, PartialEq)]
pub struct Electrode {
    pub name: String,
    pub position: [f64; 3],
}

/// Electrode names and unit-sphere positions. Lookup is case-insensitive.
#[derive(Debug, Clone)]
pub struct ElectrodeTable {
    electrodes: Vec<Electrode>,
    index: HashMap<String, usize>,
}

impl ElectrodeTable {
    /// The bundled 64-sensor table in corpus channel order.
    pub fn standard() -> Self {
        Self::from_csv(STANDARD_CSV).expect("bundled electrode table is valid")
    }

    /// Parses `name,x,y,z` lines; `#` starts a comment line.
    pub fn from_csv(text: &str) -> Result<Self, TopomapError> {
        let mut electrodes = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || TopomapError::ElectrodeTable(format!("line {}: {line:?}", lineno + 1));
            if fields.len() != 4 {
                return Err(bad());
            }
            let mut p = [0.0; 3];
            for (dst, f) in p.iter_mut().zip(&fields[1..]) {
                *dst = f.parse().map_err(|_| bad())?;
            }
            electrodes.push(Electrode { name: fields[0].to_string(), position: p });
        }
        Self::new(electrodes)
    }

    pub fn new(electrodes: Vec<Electrode>) -> Result<Self, TopomapError> {
        let mut index = HashMap::new();
        for (i, e) in electrodes.iter().enumerate() {
            let norm = e.position.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(TopomapError::NonUnitVector(e.position));
            }
            if index.insert(e.name.to_ascii_uppercase(), i).is_some() {
                return Err(TopomapError::ElectrodeTable(format!("duplicate electrode {}", e.name)));
            }
        }
        Ok(Self { electrodes, index })
    }

    pub fn len(&self) -> usize {
        self.electrodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.electrodes.is_empty()
    }

    pub fn electrodes(&self) -> &[Electrode] {
        &self.electrodes
    }

    pub fn name(&self, i: usize) -> &str {
        &self.electrodes[i].name
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(&name.to_ascii_uppercase()).copied()
    }

    /// Azimuthal-equidistant positions of every electrode, in table order.
    pub fn projected(&self) -> Vec<[f64; 2]> {
        self.electrodes.iter().map(|e| project_azimuthal(e.position).expect("table holds unit vectors")).collect()
    }
}

/// Azimuthal equidistant projection about the vertex `(0, 0, 1)`: the
/// planar distance from the origin equals the great-circle angle from the
/// vertex.
pub fn project_azimuthal(coord: [f64; 3]) -> Result<[f64; 2], TopomapError> {
    let [x, y, z] = coord;
    let norm = (x * x + y * y + z * z).sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
        return Err(TopomapError::NonUnitVector(coord));
    }
    let r = z.clamp(-1.0, 1.0).acos();
    let phi = y.atan2(x);
    Ok([r * phi.cos(), r * phi.sin()])
}
