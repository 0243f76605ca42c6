//! Flat-shaded ray-cast renderer producing log-intensity frames.
//!
//! World frame is right-handed with `z` up and units in meters. The camera
//! looks along its yaw direction with zero pitch; image columns grow to the
//! right and rows grow downward. Pixel `(i, j)` covers `[i, i+1) × [j, j+1)`
//! in continuous image coordinates, so the principal point sits at
//! `(W/2, H/2)`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Mul, Neg, Sub};

use crate::{Error, Result};

/// Point or direction in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    /// Meters along x.
    pub x: f64,
    /// Meters along y.
    pub y: f64,
    /// Meters along z (up).
    pub z: f64,
}

impl Vec3 {
    /// Origin.
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    /// Builds a vector from components.
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    /// Dot product.
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Euclidean length.
    pub fn norm(self) -> f64 {
        libm::sqrt(self.dot(self))
    }

    /// Distance to another point.
    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    /// All components finite.
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Default sensor width (DAVIS240).
pub const SENSOR_WIDTH: usize = 240;
/// Default sensor height (DAVIS240).
pub const SENSOR_HEIGHT: usize = 180;
/// Default horizontal field of view, 70 degrees.
pub const DEFAULT_FOV: f64 = 70.0 * core::f64::consts::PI / 180.0;
/// Default camera height above the agent's ground position.
pub const DEFAULT_MOUNT_HEIGHT: f64 = 0.15;

/// Pinhole camera with zero pitch and square pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    /// Image width in pixels.
    pub width: usize,
    /// Image height in pixels.
    pub height: usize,
    /// Horizontal field of view in radians.
    pub horizontal_fov: f64,
    /// Ground position of the agent carrying the camera.
    pub position: Vec3,
    /// Heading in radians, counter-clockwise from +x.
    pub yaw: f64,
    /// Height of the optical center above `position`.
    pub mount_height: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            width: SENSOR_WIDTH,
            height: SENSOR_HEIGHT,
            horizontal_fov: DEFAULT_FOV,
            position: Vec3::ZERO,
            yaw: 0.0,
            mount_height: DEFAULT_MOUNT_HEIGHT,
        }
    }
}

/// Continuous image coordinate returned by [`project`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    /// Horizontal coordinate in `[0, W]`.
    pub x: f64,
    /// Vertical coordinate in `[0, H]`.
    pub y: f64,
}

impl PixelCoord {
    /// Column index of the pixel containing this coordinate.
    pub fn column(&self, width: usize) -> usize {
        (libm::floor(self.x) as usize).min(width - 1)
    }

    /// Row index of the pixel containing this coordinate.
    pub fn row(&self, height: usize) -> usize {
        (libm::floor(self.y) as usize).min(height - 1)
    }
}

impl CameraModel {
    /// Camera at the given ground pose with default intrinsics.
    pub fn at(position: Vec3, yaw: f64) -> Self {
        CameraModel {
            position,
            yaw,
            ..Default::default()
        }
    }

    /// Same camera with a different resolution.
    pub fn with_resolution(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    /// Checks resolution, field of view and pose.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera resolution must be positive"));
        }
        if !(self.horizontal_fov > 0.0 && self.horizontal_fov < core::f64::consts::PI) {
            return Err(Error::invalid("field of view must lie in (0, pi)"));
        }
        if !self.position.is_finite() || !self.yaw.is_finite() || !self.mount_height.is_finite() {
            return Err(Error::invalid("camera pose must be finite"));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal_length(&self) -> f64 {
        (self.width as f64 / 2.0) / libm::tan(self.horizontal_fov / 2.0)
    }

    /// Optical center in the world.
    pub fn eye(&self) -> Vec3 {
        self.position + Vec3::new(0.0, 0.0, self.mount_height)
    }

    /// Unit optical axis.
    pub fn forward(&self) -> Vec3 {
        Vec3::new(libm::cos(self.yaw), libm::sin(self.yaw), 0.0)
    }

    /// Unit vector toward increasing image columns.
    pub fn right(&self) -> Vec3 {
        Vec3::new(libm::sin(self.yaw), -libm::cos(self.yaw), 0.0)
    }
}

/// Pinhole projection of a world point.
///
/// Returns `None` for points at or behind the camera plane, and for points
/// whose image falls outside the closed image rectangle `[0, W] × [0, H]`.
pub fn project(point: Vec3, camera: &CameraModel) -> Option<PixelCoord> {
    let rel = point - camera.eye();
    let depth = rel.dot(camera.forward());
    if depth <= 0.0 {
        return None;
    }
    let f = camera.focal_length();
    let x = camera.width as f64 / 2.0 + f * rel.dot(camera.right()) / depth;
    let y = camera.height as f64 / 2.0 - f * rel.z / depth;
    let inside = (0.0..=camera.width as f64).contains(&x) && (0.0..=camera.height as f64).contains(&y);
    inside.then_some(PixelCoord { x, y })
}

/// Geometry of a scene object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// Sphere; size is the radius.
    Sphere,
    /// Axis-aligned cube; size is the half extent.
    Cube,
}

/// Default object intensity.
pub const OBJECT_INTENSITY: f64 = 0.1;

/// A flat-shaded object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    /// Sphere or cube.
    pub shape: Shape,
    /// Center in the world.
    pub center: Vec3,
    /// Radius (sphere) or half extent (cube).
    pub size: f64,
    /// Linear intensity in `(0, 1]`.
    pub intensity: f64,
}

impl SceneObject {
    /// A sphere with the default object intensity.
    pub fn sphere(center: Vec3, radius: f64) -> Self {
        SceneObject {
            shape: Shape::Sphere,
            center,
            size: radius,
            intensity: OBJECT_INTENSITY,
        }
    }

    /// A cube with the default object intensity.
    pub fn cube(center: Vec3, half_extent: f64) -> Self {
        SceneObject {
            shape: Shape::Cube,
            center,
            size: half_extent,
            intensity: OBJECT_INTENSITY,
        }
    }

    /// Same object with another intensity.
    pub fn with_intensity(mut self, intensity: f64) -> Self {
        self.intensity = intensity;
        self
    }

    /// Checks size, position and intensity.
    pub fn validate(&self, background: &Background) -> Result<()> {
        if !(self.size > 0.0) || !self.size.is_finite() {
            return Err(Error::invalid("object size must be positive and finite"));
        }
        if !self.center.is_finite() {
            return Err(Error::invalid("object center must be finite"));
        }
        if !(self.intensity > 0.0 && self.intensity <= 1.0) {
            return Err(Error::invalid("object intensity must lie in (0, 1]"));
        }
        if self.intensity == background.sky || self.intensity == background.ground {
            return Err(Error::invalid("object intensity must differ from the background"));
        }
        Ok(())
    }

    /// Distance along a unit ray to the first surface hit, if any.
    fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        match self.shape {
            Shape::Sphere => {
                let oc = origin - self.center;
                let b = oc.dot(dir);
                let c = oc.dot(oc) - self.size * self.size;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = libm::sqrt(disc);
                let near = -b - s;
                if near > 0.0 {
                    return Some(near);
                }
                let far = -b + s;
                (far > 0.0).then_some(far)
            }
            Shape::Cube => {
                let lo = self.center - Vec3::new(self.size, self.size, self.size);
                let hi = self.center + Vec3::new(self.size, self.size, self.size);
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for (o, d, l, h) in [
                    (origin.x, dir.x, lo.x, hi.x),
                    (origin.y, dir.y, lo.y, hi.y),
                    (origin.z, dir.z, lo.z, hi.z),
                ] {
                    if d == 0.0 {
                        if o < l || o > h {
                            return None;
                        }
                        continue;
                    }
                    let (a, b) = ((l - o) / d, (h - o) / d);
                    let (a, b) = if a < b { (a, b) } else { (b, a) };
                    t_near = t_near.max(a);
                    t_far = t_far.min(b);
                    if t_near > t_far {
                        return None;
                    }
                }
                if t_near > 0.0 {
                    Some(t_near)
                } else if t_far > 0.0 {
                    Some(t_far)
                } else {
                    None
                }
            }
        }
    }
}

/// Sky and ground intensities seen where no object is hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Background {
    /// Intensity above the horizon.
    pub sky: f64,
    /// Intensity of the ground plane `z = 0`.
    pub ground: f64,
}

impl Default for Background {
    fn default() -> Self {
        Background { sky: 0.8, ground: 0.4 }
    }
}

/// Per-pixel log intensity `L = ln I`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityFrame {
    /// Width in pixels.
    pub width: usize,
    /// Height in pixels.
    pub height: usize,
    /// Log intensities, `values[y * width + x]`.
    pub values: Vec<f32>,
}

impl IntensityFrame {
    /// A frame with every pixel set to the same log intensity.
    pub fn filled(width: usize, height: usize, log_intensity: f32) -> Self {
        IntensityFrame {
            width,
            height,
            values: vec![log_intensity; width * height],
        }
    }

    /// Log intensity at column `x`, row `y`.
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// Renders the scene from the camera: one ray through each pixel center,
/// nearest hit wins, flat intensity per surface, stored as `ln I`.
///
/// Panics if the camera fails [`CameraModel::validate`].
pub fn render(scene: &[SceneObject], camera: &CameraModel, background: &Background) -> IntensityFrame {
    camera.validate().expect("invalid camera");
    let (w, h) = (camera.width, camera.height);
    let eye = camera.eye();
    let fwd = camera.forward();
    let right = camera.right();
    let f = camera.focal_length();
    let log_sky = libm::log(background.sky) as f32;
    let log_ground = libm::log(background.ground) as f32;
    let object_logs: Vec<f32> = scene.iter().map(|o| libm::log(o.intensity) as f32).collect();

    let mut values = Vec::with_capacity(w * h);
    for row in 0..h {
        let up = -((row as f64 + 0.5) - h as f64 / 2.0) / f;
        for col in 0..w {
            let across = ((col as f64 + 0.5) - w as f64 / 2.0) / f;
            let d = fwd + right * across + Vec3::new(0.0, 0.0, up);
            let dir = d * (1.0 / d.norm());

            let (mut best_t, mut value) = if dir.z < 0.0 {
                (-eye.z / dir.z, log_ground)
            } else {
                (f64::INFINITY, log_sky)
            };
            for (obj, &log_i) in scene.iter().zip(&object_logs) {
                if let Some(t) = obj.intersect(eye, dir) {
                    if t < best_t {
                        best_t = t;
                        value = log_i;
                    }
                }
            }
            values.push(value);
        }
    }
    IntensityFrame {
        width: w,
        height: h,
        values,
    }
}
