// Built-in doll specs so the studio works without any uploads.

export interface DollSpecJson {
  seed: number;
  pose_params: number[];
  body_tone: number;
  hair_style: string;
  top: Record<string, unknown>;
  bottom: Record<string, unknown>;
}

function garment(length: number, width: number, color: number[], pattern = "solid") {
  return { sleeve_or_leg_length: length, width, base_color: color, pattern };
}

export const PRESET_PEOPLE: Record<string, DollSpecJson> = {
  "long hair, striped top": {
    seed: 5,
    pose_params: [0, 0.4, 0.4, 0, 0, 0, 0, 0, 0, 0],
    body_tone: 0.35,
    hair_style: "long",
    top: garment(0.6, 0.4, [0.2, 0.6, 0.3], "stripes"),
    bottom: garment(0.7, 0.3, [0.5, 0.3, 0.2]),
  },
  "short hair, dotted top": {
    seed: 11,
    pose_params: [0.2, 0.6, 0.1, 0, 0, 0.3, 0.3, 0, 0, 0.2],
    body_tone: 0.6,
    hair_style: "short",
    top: garment(0.3, 0.6, [0.3, 0.3, 0.8], "dots"),
    bottom: garment(0.4, 0.5, [0.25, 0.25, 0.3]),
  },
};

export const PRESET_GARMENTS: Record<string, { label: number; spec: DollSpecJson }> = {
  "red top": {
    label: 3,
    spec: {
      seed: 21,
      pose_params: [0, 0.4, 0.4, 0, 0, 0, 0, 0, 0, 0],
      body_tone: 0.4,
      hair_style: "none",
      top: garment(0.9, 0.6, [0.85, 0.15, 0.2]),
      bottom: garment(0.3, 0.3, [0.4, 0.4, 0.4]),
    },
  },
  "long hair (as garment)": {
    label: 2,
    spec: {
      seed: 22,
      pose_params: [0, 0.4, 0.4, 0, 0, 0, 0, 0, 0, 0],
      body_tone: 0.4,
      hair_style: "long",
      top: garment(0.5, 0.3, [0.3, 0.5, 0.7]),
      bottom: garment(0.5, 0.3, [0.4, 0.3, 0.3]),
    },
  },
  "wide bottoms": {
    label: 4,
    spec: {
      seed: 23,
      pose_params: [0, 0.4, 0.4, 0, 0, 0, 0, 0, 0, 0],
      body_tone: 0.4,
      hair_style: "none",
      top: garment(0.4, 0.3, [0.5, 0.6, 0.2]),
      bottom: garment(1.0, 0.9, [0.15, 0.2, 0.5], "stripes"),
    },
  },
};
