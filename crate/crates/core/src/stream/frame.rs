use crate::net::wire::{put_u16, put_u32, put_u64, put_u8, WireReader};
use crate::render::{DepthImage, Vdi};

use super::StreamError;

pub const FRAME_MAGIC: &[u8; 4] = b"FRM0";
/// Magic, frame_seq, sim_step, capture timestamp, width, height, encoding,
/// payload length.
pub const FRAME_HEADER_LEN: usize = 4 + 8 + 8 + 8 + 2 + 2 + 1 + 4;

/// Longest run or literal stretch one RLE header can describe.
const MAX_RUN: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Raw = 0,
    Rle = 1,
    Vdi = 2,
}

impl TryFrom<u8> for Encoding {
    type Error = StreamError;

    fn try_from(v: u8) -> Result<Self, StreamError> {
        match v {
            0 => Ok(Encoding::Raw),
            1 => Ok(Encoding::Rle),
            2 => Ok(Encoding::Vdi),
            _ => Err(StreamError::InvalidArgument(format!("unsupported frame encoding {v}"))),
        }
    }
}

/// What a frame carries: a flat image or a volumetric depth image.
#[derive(Debug, Clone, Copy)]
pub enum FrameImage<'a> {
    Image(&'a DepthImage),
    Vdi(&'a Vdi),
}

impl FrameImage<'_> {
    pub fn size(&self) -> (usize, usize) {
        match self {
            FrameImage::Image(i) => (i.width, i.height),
            FrameImage::Vdi(v) => (v.width, v.height),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMessage {
    pub frame_seq: u64,
    pub sim_step: u64,
    /// Microseconds on the head's monotonic clock.
    pub capture_us: u64,
    pub width: u16,
    pub height: u16,
    pub encoding: Encoding,
    pub payload: Vec<u8>,
}

impl FrameMessage {
    pub fn header(&self) -> [u8; FRAME_HEADER_LEN] {
        frame_header(self.frame_seq, self.sim_step, self.capture_us, self.width, self.height, self.encoding, self.payload.len())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.header());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes one message, returning it and the bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(FrameMessage, usize), StreamError> {
        let mut r = WireReader::new(buf);
        r.expect_magic(FRAME_MAGIC)?;
        let frame_seq = r.u64()?;
        let sim_step = r.u64()?;
        let capture_us = r.u64()?;
        let width = r.u16()?;
        let height = r.u16()?;
        let encoding = Encoding::try_from(r.u8()?)?;
        let len = r.u32()? as usize;
        let payload = r.take(len)?.to_vec();
        let msg = FrameMessage {
            frame_seq,
            sim_step,
            capture_us,
            width,
            height,
            encoding,
            payload,
        };
        if encoding == Encoding::Raw && len != 4 * width as usize * height as usize {
            return Err(StreamError::Protocol(format!(
                "raw frame {width}x{height} with {len} payload bytes"
            )));
        }
        Ok((msg, r.position()))
    }

    /// Decoded RGBA pixels for raw and RLE frames.
    pub fn pixels(&self) -> Result<Vec<[u8; 4]>, StreamError> {
        let (w, h) = (self.width as usize, self.height as usize);
        match self.encoding {
            Encoding::Raw => Ok(self.payload.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect()),
            Encoding::Rle => rle_decode(&self.payload, w, h),
            Encoding::Vdi => Err(StreamError::InvalidArgument("VDI frame has no flat pixels".into())),
        }
    }

    pub fn vdi(&self) -> Result<Vdi, StreamError> {
        if self.encoding != Encoding::Vdi {
            return Err(StreamError::InvalidArgument(format!("{:?} frame carries no VDI", self.encoding)));
        }
        Ok(Vdi::from_bytes(&self.payload)?)
    }
}

pub fn frame_header(
    frame_seq: u64,
    sim_step: u64,
    capture_us: u64,
    width: u16,
    height: u16,
    encoding: Encoding,
    payload_len: usize,
) -> [u8; FRAME_HEADER_LEN] {
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN);
    out.extend_from_slice(FRAME_MAGIC);
    put_u64(&mut out, frame_seq);
    put_u64(&mut out, sim_step);
    put_u64(&mut out, capture_us);
    put_u16(&mut out, width);
    put_u16(&mut out, height);
    put_u8(&mut out, encoding as u8);
    put_u32(&mut out, payload_len as u32);
    out.try_into().expect("fixed header length")
}

/// Frame payload for `image` under `encoding`. Raw and RLE need a flat
/// image, the VDI encoding a VDI, whose file form becomes the payload.
pub fn encode_payload(image: FrameImage<'_>, encoding: Encoding) -> Result<Vec<u8>, StreamError> {
    match (image, encoding) {
        (FrameImage::Image(img), Encoding::Raw) => Ok(img.rgba.iter().flatten().copied().collect()),
        (FrameImage::Image(img), Encoding::Rle) => Ok(rle_encode(&img.rgba, img.width)),
        (FrameImage::Vdi(v), Encoding::Vdi) => Ok(v.to_bytes()),
        (_, e) => Err(StreamError::InvalidArgument(format!(
            "encoding {e:?} does not fit this frame type"
        ))),
    }
}

pub fn encode_frame(
    image: FrameImage<'_>,
    encoding: Encoding,
    frame_seq: u64,
    sim_step: u64,
    capture_us: u64,
) -> Result<FrameMessage, StreamError> {
    let (w, h) = image.size();
    if w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(StreamError::InvalidArgument(format!("frame size {w}x{h}")));
    }
    Ok(FrameMessage {
        frame_seq,
        sim_step,
        capture_us,
        width: w as u16,
        height: h as u16,
        encoding,
        payload: encode_payload(image, encoding)?,
    })
}

/// Per-row run-length coding of RGBA pixels.
///
/// A run is `count u8` (1..=255) followed by the pixel; a literal stretch
/// is `0x00, len u8` followed by `len` pixels. Runs of two or more equal
/// pixels become runs, a lone pixel between runs becomes a run of one, and
/// longer stretches without repeats become literals. Runs never cross rows.
pub fn rle_encode(rgba: &[[u8; 4]], width: usize) -> Vec<u8> {
    let mut out = Vec::new();
    if width == 0 {
        return out;
    }
    for row in rgba.chunks(width) {
        let mut i = 0;
        let mut literal_start = 0;
        while i < row.len() {
            let mut run = 1;
            while i + run < row.len() && row[i + run] == row[i] && run < MAX_RUN {
                run += 1;
            }
            if run >= 2 {
                flush_literal(&mut out, &row[literal_start..i]);
                out.push(run as u8);
                out.extend_from_slice(&row[i]);
                i += run;
                literal_start = i;
            } else {
                i += 1;
            }
        }
        flush_literal(&mut out, &row[literal_start..]);
    }
    out
}

fn flush_literal(out: &mut Vec<u8>, px: &[[u8; 4]]) {
    if px.len() == 1 {
        out.push(1);
        out.extend_from_slice(&px[0]);
        return;
    }
    for chunk in px.chunks(MAX_RUN) {
        out.push(0);
        out.push(chunk.len() as u8);
        for p in chunk {
            out.extend_from_slice(p);
        }
    }
}

pub fn rle_decode(payload: &[u8], width: usize, height: usize) -> Result<Vec<[u8; 4]>, StreamError> {
    let mut out = Vec::with_capacity(width * height);
    let mut r = WireReader::new(payload);
    for y in 0..height {
        let row_end = (y + 1) * width;
        while out.len() < row_end {
            let count = r.u8()? as usize;
            let (n, literal) = if count == 0 { (r.u8()? as usize, true) } else { (count, false) };
            if n == 0 || out.len() + n > row_end {
                return Err(StreamError::Protocol(format!("RLE entry of {n} pixels overruns row {y}")));
            }
            if literal {
                for _ in 0..n {
                    out.push(r.array::<4>()?);
                }
            } else {
                let px = r.array::<4>()?;
                out.extend(std::iter::repeat(px).take(n));
            }
        }
    }
    if r.remaining() != 0 {
        return Err(StreamError::Protocol(format!("{} bytes after the last RLE row", r.remaining())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_black_pixels_are_one_run() {
        let black = [0, 0, 0, 255];
        assert_eq!(rle_encode(&[black, black], 2), vec![2, 0, 0, 0, 255]);
    }

    #[test]
    fn mixed_row_layout() {
        let (a, b, c) = ([1, 1, 1, 1], [2, 2, 2, 2], [3, 3, 3, 3]);
        let enc = rle_encode(&[a, b, c, c, c, a], 6);
        assert_eq!(
            enc,
            vec![0, 2, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 3, 1, 1, 1, 1, 1]
        );
        assert_eq!(rle_decode(&enc, 6, 1).unwrap(), vec![a, b, c, c, c, a]);
    }

    #[test]
    fn runs_do_not_cross_rows() {
        let p = [9, 9, 9, 9];
        let enc = rle_encode(&[p; 6], 3);
        assert_eq!(enc, vec![3, 9, 9, 9, 9, 3, 9, 9, 9, 9]);
    }

    #[test]
    fn long_runs_split_at_255() {
        let p = [5, 6, 7, 8];
        let enc = rle_encode(&vec![p; 300], 300);
        assert_eq!(enc, vec![255, 5, 6, 7, 8, 45, 5, 6, 7, 8]);
        let lits: Vec<[u8; 4]> = (0..300u32).map(|i| (i * 7919).to_le_bytes()).collect();
        let enc = rle_encode(&lits, 300);
        assert_eq!(enc.len(), 2 + 255 * 4 + 2 + 45 * 4);
        assert_eq!(rle_decode(&enc, 300, 1).unwrap(), lits);
    }

    #[test]
    fn bad_streams_are_rejected() {
        assert!(rle_decode(&[3, 0, 0, 0, 0], 2, 1).is_err());
        assert!(rle_decode(&[2, 0, 0, 0, 0, 7], 2, 1).is_err());
        assert!(rle_decode(&[0, 0], 2, 1).is_err());
        assert!(Encoding::try_from(3).is_err());
    }
}
