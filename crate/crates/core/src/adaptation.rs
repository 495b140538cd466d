//! Training losses for day-to-night segmentation adaptation, evaluated on
//! dense prediction maps.
//!
//! These are plain functions of the network outputs: a teacher-student
//! cross-entropy on daytime images, a per-pixel least-squares domain
//! discriminator loss, and the two objectives that alternate during
//! training.

use crate::error::{Error, Result};

/// Student probabilities are clamped to this value before the logarithm.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Weight of the domain-confusion term in [`adaptation_loss_p1`].
pub const DEFAULT_LAMBDA: f64 = 0.01;

const SUM_TOLERANCE: f64 = 1e-6;

/// Per-pixel class probabilities, stored pixel-major (`C` values per pixel).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<f64>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if classes == 0 || data.len() != height * width * classes {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{classes} map needs {} values, got {}",
                height * width * classes,
                data.len()
            )));
        }
        for (i, px) in data.chunks(classes).enumerate() {
            let sum: f64 = px.iter().sum();
            if px.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::InvalidParameter(format!(
                    "pixel {i} is not a probability vector (sum {sum})"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            classes,
            data,
        })
    }

    /// Every pixel puts all mass on `labels[i]`.
    pub fn one_hot(height: usize, width: usize, classes: usize, labels: &[usize]) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} map needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        let mut data = vec![0.0; height * width * classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(Error::InvalidParameter(format!("label {l} out of range")));
            }
            data[i * classes + l] = 1.0;
        }
        Self::new(height, width, classes, data)
    }

    pub fn uniform(height: usize, width: usize, classes: usize) -> Result<Self> {
        Self::new(
            height,
            width,
            classes,
            vec![1.0 / classes as f64; height * width * classes],
        )
    }

    /// Per-pixel softmax of raw scores.
    pub fn softmax(height: usize, width: usize, classes: usize, logits: &[f64]) -> Result<Self> {
        if classes == 0 || logits.len() != height * width * classes {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{classes} logits, got {}",
                logits.len()
            )));
        }
        let mut data = Vec::with_capacity(logits.len());
        for px in logits.chunks(classes) {
            let max = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = px.iter().map(|z| (z - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| e / sum));
        }
        Self::new(height, width, classes, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Per-pixel discriminator output in `[0, 1]`: 0 means day, 1 means night.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DomainMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} domain map needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::InvalidParameter(format!(
                "domain map value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Day,
    Night,
}

impl Domain {
    fn target(self) -> f64 {
        match self {
            Domain::Day => 0.0,
            Domain::Night => 1.0,
        }
    }
}

/// Cross-entropy of the student against the teacher, averaged over pixels.
pub fn daytime_segmentation_loss(teacher: &ProbMap, student: &ProbMap) -> Result<f64> {
    if (teacher.height, teacher.width, teacher.classes)
        != (student.height, student.width, student.classes)
    {
        return Err(Error::ShapeMismatch(format!(
            "teacher {}x{}x{} vs student {}x{}x{}",
            teacher.height,
            teacher.width,
            teacher.classes,
            student.height,
            student.width,
            student.classes
        )));
    }
    let total: f64 = teacher
        .data
        .iter()
        .zip(&student.data)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, s)| -t * s.max(PROBABILITY_FLOOR).ln())
        .sum();
    Ok(total / teacher.pixels() as f64)
}

/// Mean squared distance of the discriminator output from the domain label.
pub fn discriminator_loss(c_out: &DomainMap, domain: Domain) -> f64 {
    let target = domain.target();
    let total: f64 = c_out.data.iter().map(|c| (target - c).powi(2)).sum();
    total / c_out.data.len() as f64
}

/// Segmentation network objective: daytime cross-entropy plus `lambda`
/// times the confusion term, which rewards night predictions that the
/// discriminator labels as day.
pub fn adaptation_loss_p1(
    teacher_day: &ProbMap,
    student_day: &ProbMap,
    c_out_night: &DomainMap,
    lambda: f64,
) -> Result<f64> {
    Ok(daytime_segmentation_loss(teacher_day, student_day)?
        + lambda * discriminator_loss(c_out_night, Domain::Day))
}

/// Discriminator objective: the mean of its day and night losses.
pub fn loss_p2(c_day: &DomainMap, c_night: &DomainMap) -> Result<f64> {
    if (c_day.height, c_day.width) != (c_night.height, c_night.width) {
        return Err(Error::ShapeMismatch(format!(
            "day map {}x{} vs night map {}x{}",
            c_day.height, c_day.width, c_night.height, c_night.width
        )));
    }
    Ok(0.5 * (discriminator_loss(c_day, Domain::Day) + discriminator_loss(c_night, Domain::Night)))
}
