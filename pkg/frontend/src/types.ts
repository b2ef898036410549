export interface PairSide {
  id: string;
  image_url: string;
}

export interface PairView {
  pair_id: number;
  left: PairSide;
  right: PairSide;
}

export type NextPair = PairView | { done: true };

export function isDone(next: NextPair): next is { done: true } {
  return "done" in next;
}

export type Winner = "left" | "right" | "skip";

export interface VoteRecord {
  ts: number;
  pair_id: number;
  left: string;
  right: string;
  winner: Winner;
  rater: string;
}

export interface Progress {
  answered: number;
  total: number;
  liked_so_far: number;
}

export type MapMode = "generic" | "specific";
