use std::io::{self, Write};

use super::{Config2D, EnvError, World};

/// Binary occupancy raster of a world. Row `i` covers `y ∈ [i·cs, (i+1)·cs)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Costmap {
    pub resolution: usize,
    pub cell_size: f64,
    /// Row-major, 1 = occupied.
    pub cells: Vec<u8>,
}

pub const MIN_RESOLUTION: usize = 8;

/// A cell is occupied iff its center lies in some obstacle.
pub fn render_costmap(world: &World, resolution: usize) -> Result<Costmap, EnvError> {
    if resolution < MIN_RESOLUTION {
        return Err(EnvError::Config(format!("costmap resolution must be >= {MIN_RESOLUTION}, got {resolution}")));
    }
    let cs = world.side / resolution as f64;
    let mut cells = vec![0u8; resolution * resolution];
    for i in 0..resolution {
        for j in 0..resolution {
            let c = Config2D::new((j as f64 + 0.5) * cs, (i as f64 + 0.5) * cs);
            if world.obstacles.iter().any(|o| o.contains(c)) {
                cells[i * resolution + j] = 1;
            }
        }
    }
    Ok(Costmap { resolution, cell_size: cs, cells })
}

impl Costmap {
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.resolution + col]
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.cells.iter().filter(|&&c| c == 1).count() as f64 / self.cells.len() as f64
    }

    /// Binary PGM (P5, maxval 255): occupied = 0, free = 255. The top image row is the highest `y`.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> io::Result<()> {
        let r = self.resolution;
        write!(out, "P5\n{r} {r}\n255\n")?;
        for i in (0..r).rev() {
            let row: Vec<u8> = (0..r).map(|j| if self.get(i, j) == 1 { 0 } else { 255 }).collect();
            out.write_all(&row)?;
        }
        Ok(())
    }
}
