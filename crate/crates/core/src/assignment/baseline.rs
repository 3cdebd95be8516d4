use rand::seq::SliceRandom;
use rand::Rng;

use super::{Assignment, Slot};
use crate::config::NetworkConfig;

/// Uniformly chosen devices placed on uniformly shuffled (channel, SF) slots.
pub fn random_assignment<R: Rng + ?Sized>(rng: &mut R, config: &NetworkConfig) -> Assignment {
    let target = config.scheduled_per_frame();
    let mut devices: Vec<usize> = (0..config.devices).collect();
    let (chosen, _) = devices.partial_shuffle(rng, target);
    let mut slots: Vec<Slot> = (0..config.channels)
        .flat_map(|channel| config.sf_set.iter().map(move |&sf| Slot { channel, sf }))
        .collect();
    slots.shuffle(rng);
    let mut out = Assignment::empty(config.devices);
    for (&k, &slot) in chosen.iter().zip(&slots) {
        out.set(k, slot);
    }
    out
}

/// Frame `i` serves devices `(i * M N + j) mod K`, filling channels in order
/// and SFs in set order.
pub fn round_robin(frame_index: usize, config: &NetworkConfig) -> Assignment {
    let n = config.sf_capacity();
    let slots = config.slots();
    let mut out = Assignment::empty(config.devices);
    if config.devices == 0 {
        return out;
    }
    for j in 0..config.scheduled_per_frame() {
        let k = (frame_index * slots + j) % config.devices;
        out.set(
            k,
            Slot {
                channel: j / n,
                sf: config.sf_set[j % n],
            },
        );
    }
    out
}
