/** Wire types of the session service, mirrored verbatim. */

export interface Tile {
  id: string;
  caption: string | null;
  image_uri: string | null;
  score: number;
}

export interface RoundView {
  round: number;
  question: string | null;
  answer: string | null;
  reformulated_query: string;
  rank: number | null;
  results: Tile[];
}

export interface CreateSessionResponse {
  session_id: string;
  done: boolean;
  question: string | null;
  round: RoundView;
}

export interface AnswerResponse {
  session_id: string;
  done: boolean;
  question: string | null;
  round: RoundView;
}

export interface SessionResource {
  session_id: string;
  created_at: string;
  updated_at: string;
  done: boolean;
  question: string | null;
  rounds: RoundView[];
}

export interface EpisodeLogDto {
  query_id: string;
  rounds: Array<{
    round: number;
    question: string | null;
    answer: string | null;
    reformulated_query: string;
    rank: number | null;
  }>;
}

export interface EndSessionResponse {
  session_id: string;
  log: EpisodeLogDto;
  log_path: string | null;
}

/** Client-side session state; a pure cache of the service resource. */
export interface SessionView {
  sessionId: string | null;
  rounds: RoundView[];
  pendingQuestion: string | null;
  done: boolean;
  busy: boolean;
  error: string | null;
  log: EpisodeLogDto | null;
}
