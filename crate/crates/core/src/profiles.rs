//! The space of monotone preference profiles of a market, indexed in mixed
//! radix: the first student is the most significant digit and each digit
//! indexes [`enumerate_monotone_preferences`] for that student.

use std::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    enumerate_monotone_preferences, Caps, Market, PreferenceProfile, StudentId, StudentPreference,
};

/// Which profiles a profile-quantified check visits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Coverage {
    /// Every profile, subject to the profile cap.
    #[default]
    Exhaustive,
    /// `n` profiles drawn uniformly with replacement from a ChaCha8 stream seeded by `seed`.
    Sample { n: u64, seed: u64 },
}

impl Coverage {
    pub fn is_exhaustive(&self) -> bool {
        matches!(self, Coverage::Exhaustive)
    }
}

#[derive(Clone, Debug)]
pub struct ProfileSpace {
    students: Vec<StudentId>,
    options: Vec<Vec<StudentPreference>>,
    /// Global contract indices of each option's acceptable list.
    indexed: Vec<Vec<Vec<usize>>>,
}

impl ProfileSpace {
    pub fn new(market: &Market) -> Self {
        let students = market.students().to_vec();
        let options: Vec<Vec<StudentPreference>> = students
            .iter()
            .map(|s| enumerate_monotone_preferences(s, market))
            .collect();
        let indexed = options
            .iter()
            .map(|opts| {
                opts.iter()
                    .map(|p| {
                        p.acceptable
                            .iter()
                            .map(|c| {
                                market
                                    .contract_index(c)
                                    .expect("enumerated from the universe")
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        ProfileSpace {
            students,
            options,
            indexed,
        }
    }

    pub fn students(&self) -> &[StudentId] {
        &self.students
    }

    /// Number of monotone preferences of each student.
    pub fn radices(&self) -> Vec<usize> {
        self.options.iter().map(Vec::len).collect()
    }

    /// Number of profiles, saturating at `u128::MAX`.
    pub fn size(&self) -> u128 {
        self.options
            .iter()
            .fold(1u128, |acc, o| acc.saturating_mul(o.len() as u128))
    }

    pub fn options(&self, student: usize) -> &[StudentPreference] {
        &self.options[student]
    }

    pub(crate) fn indexed(&self, student: usize, option: usize) -> &[usize] {
        &self.indexed[student][option]
    }

    /// Acceptable lists, as global contract indices, of the profile at `digits`.
    pub(crate) fn lists<'a>(&'a self, digits: &[usize]) -> Vec<&'a [usize]> {
        digits
            .iter()
            .enumerate()
            .map(|(s, &d)| self.indexed(s, d))
            .collect()
    }

    pub fn profile(&self, digits: &[usize]) -> PreferenceProfile {
        PreferenceProfile::from_prefs(
            digits
                .iter()
                .enumerate()
                .map(|(s, &d)| self.options[s][d].clone()),
        )
    }

    /// Digits of `profile`, or `None` if some preference is not monotone.
    pub fn digits_of(&self, profile: &PreferenceProfile) -> Option<Vec<usize>> {
        self.students
            .iter()
            .zip(&self.options)
            .map(|(s, opts)| {
                let list = profile.acceptable(s);
                opts.iter().position(|p| p.acceptable == list)
            })
            .collect()
    }

    pub(crate) fn check_exhaustive(&self, caps: &Caps) -> Result<()> {
        let size = self.size();
        if size > caps.profiles as u128 {
            return Err(Error::capacity(
                "preference profiles",
                size.min(u64::MAX as u128) as u64,
                caps.profiles,
            ));
        }
        Ok(())
    }

    /// Visits profiles per `coverage`, in enumeration order (exhaustive) or
    /// draw order (sampled). Returns the number of profiles visited.
    pub fn visit<B>(
        &self,
        coverage: Coverage,
        caps: &Caps,
        mut f: impl FnMut(&[usize]) -> ControlFlow<B>,
    ) -> Result<(u64, ControlFlow<B>)> {
        let radices = self.radices();
        let mut visited = 0;
        match coverage {
            Coverage::Exhaustive => {
                self.check_exhaustive(caps)?;
                let mut digits = vec![0; radices.len()];
                loop {
                    visited += 1;
                    if let ControlFlow::Break(b) = f(&digits) {
                        return Ok((visited, ControlFlow::Break(b)));
                    }
                    if !advance(&mut digits, &radices) {
                        return Ok((visited, ControlFlow::Continue(())));
                    }
                }
            }
            Coverage::Sample { n, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut digits = vec![0; radices.len()];
                for _ in 0..n {
                    for (d, &r) in digits.iter_mut().zip(&radices) {
                        *d = rng.gen_range(0..r);
                    }
                    visited += 1;
                    if let ControlFlow::Break(b) = f(&digits) {
                        return Ok((visited, ControlFlow::Break(b)));
                    }
                }
                Ok((visited, ControlFlow::Continue(())))
            }
        }
    }

    /// [`visit`](Self::visit) without early exit.
    pub fn for_each(
        &self,
        coverage: Coverage,
        caps: &Caps,
        mut f: impl FnMut(&[usize]),
    ) -> Result<u64> {
        let (n, _) = self.visit::<std::convert::Infallible>(coverage, caps, |d| {
            f(d);
            ControlFlow::Continue(())
        })?;
        Ok(n)
    }
}

/// Mixed-radix increment with the last digit fastest; false after the last value.
pub(crate) fn advance(digits: &mut [usize], radices: &[usize]) -> bool {
    for i in (0..digits.len()).rev() {
        digits[i] += 1;
        if digits[i] < radices[i] {
            return true;
        }
        digits[i] = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn sizes_of_fixture_spaces() {
        assert_eq!(ProfileSpace::new(&fixtures::e1_market()).size(), 27);
        assert_eq!(ProfileSpace::new(&fixtures::f8_market()).size(), 6859);
        assert_eq!(
            ProfileSpace::new(&fixtures::e1_with_unit_college(fixtures::e1_ch1())).size(),
            81
        );
        assert_eq!(ProfileSpace::new(&fixtures::f_osv_market()).size(), 50);
    }

    #[test]
    fn exhaustive_visit_is_complete_and_ordered() {
        let space = ProfileSpace::new(&fixtures::e1_market());
        let mut seen = Vec::new();
        let n = space
            .for_each(Coverage::Exhaustive, &Caps::default(), |d| {
                seen.push(d.to_vec());
            })
            .unwrap();
        assert_eq!(n, 27);
        assert!(seen.windows(2).all(|w| w[0] < w[1]));
        for d in &seen {
            assert_eq!(space.digits_of(&space.profile(d)).as_ref(), Some(d));
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let space = ProfileSpace::new(&fixtures::f8_market());
        let draw = |seed| {
            let mut v = Vec::new();
            space
                .for_each(Coverage::Sample { n: 20, seed }, &Caps::default(), |d| {
                    v.push(d.to_vec());
                })
                .unwrap();
            v
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
        assert!(draw(7).iter().all(|d| d.iter().all(|&x| x < 19)));
    }

    #[test]
    fn profile_cap_applies_to_exhaustive_only() {
        let space = ProfileSpace::new(&fixtures::f8_market());
        let caps = Caps {
            profiles: 100,
            ..Caps::default()
        };
        let r = space.for_each(Coverage::Exhaustive, &caps, |_| {});
        assert!(matches!(r, Err(Error::Capacity { .. })));
        let n = space
            .for_each(Coverage::Sample { n: 5, seed: 1 }, &caps, |_| {})
            .unwrap();
        assert_eq!(n, 5);
    }
}
