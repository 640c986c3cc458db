#pragma polca scanl F INI v w
for (int i = 0; i < N; i++)
    w[i + 1] = F(w[i], v[i]);
