use super::TrapKind;
use crate::ir::Width;

/// Objects are placed in regions rounded up to this many bytes. Bytes past
/// the object but inside its region are readable and writable unless
/// sanitizing.
pub const REGION_ALIGN: u64 = 16;

const OFFSET_BITS: u32 = 32;
const OFFSET_MASK: u64 = (1 << OFFSET_BITS) - 1;

struct Object {
    data: Vec<u8>,
    size: u64,
    freed: bool,
}

/// Bump allocator with per-object bounds and a freed flag. Pointers are
/// `(object id << 32) | offset` with object ids starting at 1, so 0 is null.
pub(crate) struct Heap {
    objects: Vec<Object>,
    used: u64,
    seed: u64,
    sanitize: bool,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic filler for bytes the program never initialized.
fn garbage(seed: u64, id: u64, chunk: u64) -> [u8; 8] {
    mix(seed ^ mix(id << 32 ^ chunk)).to_le_bytes()
}

pub(crate) fn region_size(size: u64) -> u64 {
    size.max(1).div_ceil(REGION_ALIGN) * REGION_ALIGN
}

impl Heap {
    pub fn new(seed: u64, sanitize: bool) -> Self {
        Heap {
            objects: Vec::new(),
            used: 0,
            seed,
            sanitize,
        }
    }

    pub fn alloc(&mut self, size: u64, zeroed: bool, max_heap: u64) -> Result<u64, TrapKind> {
        if size > OFFSET_MASK {
            return Err(TrapKind::HeapLimit);
        }
        let region = region_size(size);
        if self.used.saturating_add(region) > max_heap {
            return Err(TrapKind::HeapLimit);
        }
        self.used += region;
        let id = self.objects.len() as u64 + 1;
        let mut data = vec![0u8; region as usize];
        let fill_from = if zeroed { size } else { 0 };
        for chunk in fill_from / 8..region / 8 {
            let bytes = garbage(self.seed, id, chunk);
            let start = (chunk * 8) as usize;
            for (i, b) in bytes.iter().enumerate() {
                if (start + i) as u64 >= fill_from {
                    data[start + i] = *b;
                }
            }
        }
        self.objects.push(Object {
            data,
            size,
            freed: false,
        });
        Ok(id << OFFSET_BITS)
    }

    /// Resolves `[ptr, ptr+len)` to (object index, offset).
    fn range(&self, ptr: u64, len: u64, write: bool) -> Result<(usize, usize), TrapKind> {
        let fault = if write {
            TrapKind::OobWrite
        } else {
            TrapKind::OobRead
        };
        let id = ptr >> OFFSET_BITS;
        let off = ptr & OFFSET_MASK;
        if id == 0 || id > self.objects.len() as u64 {
            return Err(fault);
        }
        let obj = &self.objects[(id - 1) as usize];
        let end = off.checked_add(len).ok_or(fault)?;
        if end > obj.data.len() as u64 {
            return Err(fault);
        }
        if self.sanitize && (obj.freed || end > obj.size) {
            return Err(fault);
        }
        Ok(((id - 1) as usize, off as usize))
    }

    pub fn load(&self, ptr: u64, width: Width) -> Result<u64, TrapKind> {
        let (o, off) = self.range(ptr, width.bytes(), false)?;
        let data = &self.objects[o].data;
        Ok(match width {
            Width::Byte => data[off] as u64,
            Width::Word => u64::from_le_bytes(data[off..off + 8].try_into().unwrap()),
        })
    }

    pub fn store(&mut self, ptr: u64, width: Width, value: u64) -> Result<(), TrapKind> {
        let (o, off) = self.range(ptr, width.bytes(), true)?;
        let data = &mut self.objects[o].data;
        match width {
            Width::Byte => data[off] = value as u8,
            Width::Word => data[off..off + 8].copy_from_slice(&value.to_le_bytes()),
        }
        Ok(())
    }

    pub fn free(&mut self, ptr: u64) -> Result<(), TrapKind> {
        if ptr == 0 {
            return Ok(());
        }
        let id = ptr >> OFFSET_BITS;
        if id == 0 || id > self.objects.len() as u64 || ptr & OFFSET_MASK != 0 {
            return Err(TrapKind::InvalidFree);
        }
        let obj = &mut self.objects[(id - 1) as usize];
        if obj.freed {
            return Err(TrapKind::DoubleFree);
        }
        obj.freed = true;
        Ok(())
    }

    pub fn memcpy(&mut self, dst: u64, src: u64, n: u64) -> Result<(), TrapKind> {
        if n == 0 {
            return Ok(());
        }
        let (so, soff) = self.range(src, n, false)?;
        let (d, doff) = self.range(dst, n, true)?;
        let n = n as usize;
        if so == d {
            self.objects[d].data.copy_within(soff..soff + n, doff);
        } else {
            let tmp = self.objects[so].data[soff..soff + n].to_vec();
            self.objects[d].data[doff..doff + n].copy_from_slice(&tmp);
        }
        Ok(())
    }

    pub fn memset(&mut self, dst: u64, byte: u8, n: u64) -> Result<(), TrapKind> {
        if n == 0 {
            return Ok(());
        }
        let (d, doff) = self.range(dst, n, true)?;
        self.objects[d].data[doff..doff + n as usize].fill(byte);
        Ok(())
    }
}
