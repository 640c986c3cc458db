float c[N], v[N], a, b;
float k = a + b;

#pragma polca map BODY v c
for (int i = 0; i < N; i++)
    #pragma polca def BODY
    #pragma polca input v[i]
    #pragma polca output c[i]
    c[i] = k * v[i];
