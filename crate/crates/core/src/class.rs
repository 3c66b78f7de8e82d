use std::fmt;

pub const NUM_CLASSES: usize = 4;

/// Object categories, in the fixed order used by anchors, heads and files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Class {
    Ball = 0,
    Crossing = 1,
    Goalpost = 2,
    Robot = 3,
}

impl Class {
    pub const ALL: [Class; NUM_CLASSES] = [Class::Ball, Class::Crossing, Class::Goalpost, Class::Robot];

    pub fn from_id(id: usize) -> Option<Class> {
        Class::ALL.get(id).copied()
    }

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Ball => "ball",
            Class::Crossing => "crossing",
            Class::Goalpost => "goalpost",
            Class::Robot => "robot",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
