import random

import pytest

from bctree.records import PersonalRecord

# the 25-field reference record used by the frozen codec vectors
FULL_FIELDS = {
    1: "Milano",
    2: "AA00000BB",
    3: "John",
    4: "Paul",
    5: "Smith",
    6: "Milano",
    7: "M",
    8: "ITA",
    9: "01.01.1971",
    10: "186",
    11: "ITA",
    12: "sig:89AB",
    13: "13.08.2014",
    14: "photo:CD12",
    15: "fp:R1-L9",
    16: "Anna Smith; Marco Smith",
    17: "ABCDEF00B00A111W",
    18: "Verona str., 1, Rome",
    19: "BAR|8003745003022|",
    20: "passport IT123456",
    21: "0",
    22: "OFF-MI-0042",
    23: "Permanent residence",
    24: "EU citizen",
    25: "-",
}


def make_personal(i: int, **extra) -> PersonalRecord:
    """Distinct, valid identity payload number i."""
    fields = {
        1: "Milano",
        2: f"AA{i:05d}BB",
        3: f"Name{i}",
        5: f"Family{i}",
        7: "MF"[i % 2],
        8: "ITA",
        9: "01.01.1971",
        15: f"fp:{i:04d}",
        17: f"FC{i:014d}",
        22: "OFF-MI-0042",
    }
    fields.update(extra)
    return PersonalRecord(fields)


def random_personal(rng: random.Random, serial: str | None = None) -> PersonalRecord:
    """Valid identity payload with randomized optional fields."""
    fields = {
        1: rng.choice(["Milano", "Roma", "Torino"]),
        2: serial or f"R{rng.randrange(10**9):09d}X",
        3: f"Name{rng.randrange(1000)}",
        5: f"Family{rng.randrange(1000)}",
        7: rng.choice("MF"),
        8: rng.choice(["ITA", "FRA", "POL"]),
        9: f"{rng.randrange(1, 29):02d}.{rng.randrange(1, 13):02d}.19{rng.randrange(50, 99)}",
        17: f"FC{rng.randrange(10**14):014d}",
        22: f"OFF-{rng.randrange(100):03d}",
    }
    for optional, width in ((4, 15), (10, 3), (16, 40), (18, 40), (23, 30)):
        if rng.random() < 0.5:
            fields[optional] = f"v{rng.randrange(10**6)}"[:width]
    return PersonalRecord(fields)


@pytest.fixture
def full_record() -> PersonalRecord:
    return PersonalRecord(FULL_FIELDS)


def build_random_tree(seed: int, max_countries: int = 5, max_identities: int = 10,
                      max_reissues: int = 3, max_accesses: int = 4):
    """Seeded random tree exercising every layer; returns (tree, rng)."""
    from bctree import tree as tree_mod
    from bctree.records import AccessEntry, PersonalRecord

    rng = random.Random(seed)
    nested = rng.random() < 0.7
    clock = 1_600_000_000
    if nested:
        codes = [f"C{i:02d}" for i in range(rng.randint(1, max_countries))]
        t = tree_mod.new_tree("nested", codes)
        countries = list(range(1, len(codes) + 1))
    else:
        t = tree_mod.new_tree("flat")
        countries = [None]
    serial = 0
    identities = []
    for _ in range(rng.randint(0, max_identities)):
        serial += 1
        clock += rng.randint(1, 50)
        t, addr = tree_mod.attach_identity_block(
            t, rng.choice(countries), random_personal(rng, serial=f"T{seed % 997:03d}{serial:05d}"),
            clock, "OFF")
        identities.append(addr)
    card_versions = list(identities)
    for identity in identities:
        for _ in range(rng.randint(0, max_reissues)):
            serial += 1
            clock += rng.randint(1, 50)
            expected = tree_mod.expected_reissue_version(t, identity)
            pd = random_personal(rng, serial=f"T{seed % 997:03d}{serial:05d}")
            pd = pd.replace_field(21, str(expected))
            t, addr = tree_mod.attach_reissue(t, identity, pd, clock, "OFF")
            card_versions.append(addr)
    for target in card_versions:
        access_clock = clock
        for k in range(rng.randint(0, max_accesses)):
            access_clock += rng.randint(1, 30)
            entry = AccessEntry(timestamp=access_clock,
                                device_id=f"dev-{rng.randrange(9)}",
                                user_id=f"user-{rng.randrange(9)}",
                                purpose=None if k % 2 else "check")
            t, _ = tree_mod.record_access(t, target, entry)
    return t, rng
